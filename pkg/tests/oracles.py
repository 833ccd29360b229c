"""Straight-line numpy references, written without the package's code paths.

Everything here works on single images (no batch axis), spatial layout
``C×H×W``, and uses explicit loops wherever the package uses reshapes.
"""

import math

import numpy as np

_erf = np.vectorize(math.erf)


def conv(x, k, b, stride=1, pad=0, depthwise=False):
    C, H, W = x.shape
    kh, kw = k.shape[2:]
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    xp[:, pad:pad + H, pad:pad + W] = x
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    O = C if depthwise else k.shape[0]
    out = np.zeros((O, oh, ow))
    for o in range(O):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                if depthwise:
                    out[o, i, j] = (patch[o] * k[o, 0]).sum() + b[o]
                else:
                    out[o, i, j] = (patch * k[o]).sum() + b[o]
    return out


def pack(raw):
    H, W = raw.shape
    out = np.zeros((4, H // 2, W // 2))
    for c, (r0, c0) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        for i in range(H // 2):
            for j in range(W // 2):
                out[c, i, j] = raw[2 * i + r0, 2 * j + c0]
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gelu(x):
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def bfp(raw, w):
    """``w`` is a dict of numpy arrays keyed like BfpWeights fields."""
    p = pack(raw)
    color = conv(p, w["conv_pack_3x3"], w["conv_pack_3x3_bias"], 1, 1)
    spatial = conv(raw[None], w["conv_ds_3x3"], w["conv_ds_3x3_bias"], 2, 1)
    g_c = sigmoid(conv(color, w["conv_color_1x1"], w["conv_color_1x1_bias"]))
    g_s = sigmoid(conv(spatial, w["conv_spatial_1x1"], w["conv_spatial_1x1_bias"]))
    return np.concatenate([spatial * g_c, color * g_s], axis=0)


def bias_matrix(table, M):
    """Per-head M²xM² bias from offset enumeration."""
    heads = table.shape[0]
    out = np.zeros((heads, M * M, M * M))
    for p in range(M * M):
        for q in range(M * M):
            dh = p // M - q // M
            dw = p % M - q % M
            out[:, p, q] = table[:, (dh + M - 1) * (2 * M - 1) + (dw + M - 1)]
    return out


def dense_attention(tokens, wq, bq, wk, bk, wv, bv, heads, bias=None):
    """Tokens ``T×C`` -> per-head outputs ``heads×T×d``."""
    T, C = tokens.shape
    d = C // heads
    q, k, v = tokens @ wq + bq, tokens @ wk + bk, tokens @ wv + bv
    outs = []
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(d)
        if bias is not None:
            s = s + bias[h]
        outs.append(softmax(s) @ v[:, sl])
    return np.stack(outs)


def windows_of(x, M):
    """Feature ``C×H×W`` -> list of (row, col, tokens ``M²×C``) windows, row-major."""
    C, H, W = x.shape
    out = []
    for wi in range(H // M):
        for wj in range(W // M):
            block = x[:, wi * M:(wi + 1) * M, wj * M:(wj + 1) * M]
            out.append(block.reshape(C, M * M).T)
    return out


def wmsa(x, w, M):
    """Returns ``N×heads×M²×d`` for feature ``C×H×W``."""
    bias = bias_matrix(w["bias_table"], M)
    return np.stack([dense_attention(t, w["wq"], w["bq"], w["wk"], w["bk"], w["wv"], w["bv"], w["heads"], bias)
                     for t in windows_of(x, M)])


def lmsa(x, w, M):
    """Attention inside every 2x2 spatial sub-window, scattered back to window order."""
    heads = w["heads"]
    C = x.shape[0]
    d = C // heads
    wins = windows_of(x, M)
    out = np.zeros((len(wins), heads, M * M, d))
    for n, t in enumerate(wins):
        for a in range(M // 2):
            for b in range(M // 2):
                idx = [(2 * a + r) * M + (2 * b + c) for r in range(2) for c in range(2)]
                z = dense_attention(t[idx], w["pq"], w["bq"], w["pk"], w["bk"], w["pv"], w["bv"], heads)
                out[n, :, idx, :] = z.transpose(1, 0, 2)
    return out


def fuse(Y, Z, w_out, b_out):
    N, k, T, d = Y.shape
    merged = np.zeros((N, T, k * d))
    for h in range(k):
        merged[:, :, h * d:(h + 1) * d] = Y[:, h] * Z[:, h]
    return merged @ w_out + b_out


def leff(tokens, w, h, wd):
    hid = w["w_expand"].shape[1]
    x = gelu(tokens @ w["w_expand"] + w["b_expand"])
    grid = x.T.reshape(hid, h, wd)
    grid = gelu(conv(grid, w["dw_kernel"], w["dw_bias"], 1, 1, depthwise=True))
    return grid.reshape(hid, h * wd).T @ w["w_contract"] + w["b_contract"]


def unwindow(tokens_per_window, C, H, W, M):
    out = np.zeros((C, H, W))
    n = 0
    for wi in range(H // M):
        for wj in range(W // M):
            out[:, wi * M:(wi + 1) * M, wj * M:(wj + 1) * M] = tokens_per_window[n].T.reshape(C, M, M)
            n += 1
    return out


def block(x, w, M):
    C, H, W = x.shape
    wins = np.stack(windows_of(x, M))
    normed = layer_norm(wins, w["ln1_gamma"], w["ln1_beta"])
    normed_map = unwindow(normed, C, H, W, M)
    att = fuse(wmsa(normed_map, w["wmsa"], M), lmsa(normed_map, w["lmsa"], M),
               w["wmsa"]["w_out"], w["wmsa"]["b_out"])
    x_sa = unwindow(att + wins, C, H, W, M)
    tokens = x_sa.reshape(C, H * W).T
    ff = leff(layer_norm(tokens, w["ln2_gamma"], w["ln2_beta"]), w["leff"], H, W)
    return (ff + tokens).T.reshape(C, H, W)


def transposed_conv(x, k, b, stride):
    """Scatter form, kernel ``(C_in, C_out, kh, kw)``, no padding."""
    C, H, W = x.shape
    _, O, kh, kw = k.shape
    out = np.zeros((O, (H - 1) * stride + kh, (W - 1) * stride + kw))
    for c in range(C):
        for i in range(H):
            for j in range(W):
                out[:, i * stride:i * stride + kh, j * stride:j * stride + kw] += x[c, i, j] * k[c]
    return out + b[:, None, None]


def network(raw, w, windows, bottleneck_window):
    """Full U-shaped forward on a single ``H×W`` mosaic; ``w`` from as_numpy."""
    f = bfp(raw, w["bfp"])
    skips = []
    for s, enc in enumerate(w["encoders"]):
        for blk in enc["blocks"]:
            f = block(f, blk, windows)
        skips.append(f)
        f = conv(f, enc["down"], enc["down_bias"], 2, 1)
    for blk in w["bottleneck"]:
        f = block(f, blk, bottleneck_window)
    for dec, skip in zip(w["decoders"], reversed(skips)):
        f = transposed_conv(f, dec["up"], dec["up_bias"], 2)
        f = conv(np.concatenate([f, skip]), dec["merge"], dec["merge_bias"])
        for blk in dec["blocks"]:
            f = block(f, blk, windows)
    r = transposed_conv(f, w["out_up"], w["out_up_bias"], 2)
    r = conv(r, w["out_conv"], w["out_conv_bias"], 1, 1)
    return raw + r[0]


def psnr(a, b, peak=1.0):
    mse = 0.0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        mse += (x - y) ** 2
    mse /= np.size(a)
    return 100.0 if mse == 0 else 10 * math.log10(peak * peak / mse)


def ssim(a, b):
    """Direct sliding-window SSIM, one 11x11 Gaussian patch at a time."""
    r = np.arange(11) - 5
    g1 = np.exp(-r ** 2 / (2 * 1.5 ** 2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    a2 = a if a.ndim == 3 else a[None]
    b2 = b if b.ndim == 3 else b[None]
    vals = []
    for x, y in zip(a2, b2):
        H, W = x.shape
        for i in range(H - 10):
            for j in range(W - 10):
                px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
                mx, my = (g * px).sum(), (g * py).sum()
                vx = (g * (px - mx) ** 2).sum()
                vy = (g * (py - my) ** 2).sum()
                cxy = (g * (px - mx) * (py - my)).sum()
                vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))
