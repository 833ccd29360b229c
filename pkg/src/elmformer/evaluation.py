"""Restoration metrics and the multiply-add cost model.

Counting convention: one multiply-add (MAC) is the unit. Convolutions and
matrix products count ``outputs × reduction length``; softmax, GELU and
sigmoid count one unit per element; layer norm counts two per element;
elementwise products count one. Additions, scalings and reshapes are free.
GFLOPs are reported as ``2 × MACs / 1e9`` (a multiply and an add per MAC),
alongside the raw MAC total.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import init_block, lmsa, wmsa
from .bayer import RawImage, simple_isp
from .network import BLOCKS_PER_STAGE, ElmformerConfig
from .numerics import ConfigError, ShapeError, Tensor, count_macs, no_grad

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


# metrics -------------------------------------------------------------------------------

def _array(x) -> np.ndarray:
    if isinstance(x, RawImage):
        return x.data
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """``10·log10(peak²/MSE)``, capped at 100 dB (the value for identical inputs)."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr extents differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(r ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    rows = np.lib.stride_tricks.sliding_window_view(x, g.size, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, g.size, axis=-1) @ g


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), no padding.

    Accepts ``H×W`` or ``C×H×W``; multichannel input averages over channels.
    """
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim extents differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3) or min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    g = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    psnr_rr: float
    psnr_rs: float
    ssim_rr: float
    ssim_rs: float


def eval_pair(pred: RawImage, gt: RawImage, wb: tuple[float, float] = (1.0, 1.0),
              gamma: float = 2.2) -> MetricReport:
    """Raw/raw metrics on clamped mosaics; raw/sRGB metrics on ``simple_isp`` renders."""
    if pred.data.shape != gt.data.shape:
        raise ShapeError(f"pred {pred.data.shape} and gt {gt.data.shape} differ")
    p, t = np.clip(pred.data, 0.0, 1.0), np.clip(gt.data, 0.0, 1.0)
    sp = simple_isp(pred, wb, gamma).data
    st = simple_isp(gt, wb, gamma).data
    return MetricReport(psnr(p, t), psnr(sp, st), ssim(p, t), ssim(sp, st))


# reports ---------------------------------------------------------------------------------

_METRIC_COLUMNS = ("psnr_rr", "ssim_rr", "psnr_rs", "ssim_rs")


def metrics_markdown(rows: dict[str, MetricReport]) -> str:
    lines = ["| method | PSNR r/r | SSIM r/r | PSNR r/s | SSIM r/s |",
             "|---|---|---|---|---|"]
    for name, r in rows.items():
        lines.append(f"| {name} | {r.psnr_rr:.2f} | {r.ssim_rr:.4f} | {r.psnr_rs:.2f} | {r.ssim_rs:.4f} |")
    return "\n".join(lines) + "\n"


def metrics_csv(rows: dict[str, MetricReport]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(("method",) + _METRIC_COLUMNS)
    for name, r in rows.items():
        out.writerow([name] + [repr(getattr(r, c)) for c in _METRIC_COLUMNS])
    return buf.getvalue()


# attention complexity --------------------------------------------------------------------

ATTENTION_VARIANTS = ("wmsa", "lmsa", "lmwin", "lewin")


@dataclass(frozen=True)
class AttentionFlops:
    """Score-computation cost of one attention variant over an ``H×W`` input.

    ``counted`` sums the per-window dominant terms over windows and heads.
    ``closed_form`` evaluates the aggregate closed-form expression (times heads);
    the two differ for the L-MSA term, see ``lmsa_closed_form_note``.
    """

    variant: str
    M: int
    d_k: int
    heads: int
    windows: int
    per_window: int
    counted: int
    closed_form: float

    @property
    def total(self) -> int:
        return self.counted


lmsa_closed_form_note = (
    "The closed-form aggregate carries HW·d_k/M² for the L-MSA term; summing the "
    "per-window cost 4·M²·d_k over HW/(4M²) windows gives HW·d_k instead."
)


def flops_attention(M: int, d_k: int, heads: int, H: int, W: int, variant: str) -> AttentionFlops:
    """Dominant score terms: W-MSA ``M⁴·d_k`` and L-MSA ``4·M²·d_k`` per window and head.

    ``wmsa``, ``lmsa`` and ``lmwin`` see the half-resolution map produced by the
    input projection (``HW/(4M²)`` windows); ``lewin`` works at full resolution.
    """
    if variant not in ATTENTION_VARIANTS:
        raise ConfigError(f"unknown attention variant {variant!r}; expected one of {ATTENTION_VARIANTS}")
    if M < 2 or M % 2:
        raise ConfigError(f"window size must be even, got {M}")
    if variant == "lewin":
        if H % M or W % M:
            raise ConfigError(f"{H}x{W} not divisible by window {M}")
        windows = H * W // (M * M)
    else:
        if H % (2 * M) or W % (2 * M):
            raise ConfigError(f"{H}x{W} at half resolution not divisible by window {M}")
        windows = H * W // (4 * M * M)
    w_term, l_term = M ** 4 * d_k, 4 * M * M * d_k
    per_window = {"wmsa": w_term, "lmsa": l_term, "lmwin": w_term + l_term, "lewin": w_term}[variant]
    HW = H * W
    closed = {
        "wmsa": HW * M * M * d_k / 4,
        "lmsa": HW * d_k / (M * M),
        "lmwin": HW * M * M * d_k / 4 + HW * d_k / (M * M),
        "lewin": HW * M * M * d_k,
    }[variant]
    return AttentionFlops(variant, M, d_k, heads, windows, per_window,
                          heads * windows * per_window, heads * closed)


def complexity_ratio(M: int, d_k: int = 16, heads: int = 1, H: int = 128, W: int = 128) -> tuple[float, float]:
    """Le-Win over Lm-Win cost as ``(closed_form, counted)``."""
    lew = flops_attention(M, d_k, heads, H, W, "lewin")
    lmw = flops_attention(M, d_k, heads, H, W, "lmwin")
    return lew.closed_form / lmw.closed_form, lew.counted / lmw.counted


@dataclass(frozen=True)
class EmpiricalRow:
    M: int
    variant: str
    instrumented: int
    analytic: int

    @property
    def ratio(self) -> float:
        return self.instrumented / self.analytic


def empirical_count_check(variant: str, sizes=(2, 4, 8), channels: int = 32, heads: int = 2,
                          windows: int = 3, seed: int = 0) -> list[EmpiricalRow]:
    """Run real attention forwards under the MAC counter and compare the score
    products (the ``*_qk`` tags) with the analytic dominant terms."""
    if variant not in ("wmsa", "lmsa", "lmwin"):
        raise ConfigError(f"empirical check supports wmsa, lmsa, lmwin; got {variant!r}")
    d_k = channels // heads
    rng = np.random.default_rng(seed)
    rows = []
    for M in sizes:
        w = init_block(channels, heads, M, rng)
        x = Tensor(rng.standard_normal((windows, M * M, channels)))
        with no_grad(), count_macs() as counter:
            if variant in ("wmsa", "lmwin"):
                wmsa(x, w.wmsa)
            if variant in ("lmsa", "lmwin"):
                lmsa(x, w.lmsa)
        got = counter["wmsa_qk"] + counter["lmsa_qk"]
        per = {"wmsa": M ** 4 * d_k, "lmsa": 4 * M * M * d_k, "lmwin": M ** 4 * d_k + 4 * M * M * d_k}[variant]
        rows.append(EmpiricalRow(M, variant, got, per * heads * windows))
    return rows


# whole-model cost ---------------------------------------------------------------------------

@dataclass
class FlopsReport:
    """Per-module MAC counts; ``total_macs`` is their exact sum."""

    modules: dict[str, int]
    by_kind: dict[str, int]
    height: int
    width: int
    attention: list[AttentionFlops] = field(default_factory=list)

    @property
    def total_macs(self) -> int:
        return sum(self.modules.values())

    @property
    def gflops(self) -> float:
        return 2.0 * self.total_macs / 1e9

    @property
    def gmacs(self) -> float:
        return self.total_macs / 1e9


def _block_macs(C: int, heads: int, M: int, h: int, w: int) -> dict[str, int]:
    n = h * w
    hid = 4 * C
    return {
        "norm": 2 * 2 * n * C,
        "wmsa_proj": 3 * n * C * C,
        "wmsa_qk": n * M * M * C,
        "wmsa_av": n * M * M * C,
        "lmsa_proj": 3 * n * C * C,
        "lmsa_qk": 4 * n * C,
        "lmsa_av": 4 * n * C,
        "softmax": heads * n * M * M + heads * n * 4,
        "elementwise": n * C,
        "attn_out": n * C * C,
        "leff": n * C * hid * 2,
        "conv": n * hid * 9,
        "activation": 2 * n * hid,
    }


def _add(dst: dict[str, int], src: dict[str, int], times: int = 1) -> None:
    for k, v in src.items():
        dst[k] = dst.get(k, 0) + v * times


def flops_model(config: ElmformerConfig, input_h: int, input_w: int) -> FlopsReport:
    """Analytic MAC count of one forward pass on a single ``input_h×input_w`` mosaic."""
    config.check(input_h, input_w)
    C, K = config.base_channels, config.depth
    h, w = input_h // 2, input_w // 2
    modules: dict[str, int] = {}
    kinds: dict[str, int] = {}
    attention = []

    def charge(name: str, parts: dict[str, int], times: int = 1) -> None:
        modules[name] = modules.get(name, 0) + sum(parts.values()) * times
        _add(kinds, parts, times)

    half = C // 2
    n0 = h * w
    charge("bfp", {"conv": n0 * half * 4 * 9 + n0 * half * 9 + 2 * n0 * half * half,
                   "activation": 2 * n0 * half, "elementwise": 2 * n0 * half})

    extents = []
    for s in range(K):
        ch, hd, M = config.stage_channels(s), config.heads(s), config.window(s)
        extents.append((h, w))
        charge(f"encoder{s}", _block_macs(ch, hd, M, h, w), BLOCKS_PER_STAGE)
        attention.append(flops_attention(M, ch // hd, hd, 2 * h, 2 * w, "lmwin"))
        h, w = h // 2, w // 2
        charge(f"encoder{s}", {"conv": (2 * ch) * h * w * ch * 16})
    ch, hd, M = config.stage_channels(K), config.heads(K), config.window(K)
    charge("bottleneck", _block_macs(ch, hd, M, h, w), BLOCKS_PER_STAGE)
    for s in reversed(range(K)):
        ch, hd, M = config.stage_channels(s), config.heads(s), config.window(s)
        up = (2 * ch) * h * w * ch * 4
        h, w = extents[s]
        charge(f"decoder{s}", {"conv": up + ch * h * w * 2 * ch})
        charge(f"decoder{s}", _block_macs(ch, hd, M, h, w), BLOCKS_PER_STAGE)
    charge("output", {"conv": C * h * w * half * 4 + input_h * input_w * half * 9})
    return FlopsReport(modules, kinds, input_h, input_w, attention)


def flops_markdown(report: FlopsReport) -> str:
    lines = [f"input {report.height}x{report.width}", "",
             "| module | MACs |", "|---|---|"]
    for name, n in report.modules.items():
        lines.append(f"| {name} | {n} |")
    lines.append(f"| total | {report.total_macs} |")
    lines += ["", f"GMACs {report.gmacs:.4f}, GFLOPs (2 x MACs) {report.gflops:.4f}"]
    return "\n".join(lines) + "\n"


def sweep_markdown(sizes, d_k: int, heads: int, H: int, W: int) -> str:
    lines = ["| M | lewin | lmwin | ratio (closed form) | 4/(1+4/M^4) | ratio (counted) |",
             "|---|---|---|---|---|---|"]
    for M in sizes:
        lew = flops_attention(M, d_k, heads, H, W, "lewin")
        lmw = flops_attention(M, d_k, heads, H, W, "lmwin")
        closed, counted = lew.closed_form / lmw.closed_form, lew.counted / lmw.counted
        lines.append(f"| {M} | {lew.counted} | {lmw.counted} | {closed:.6f} | "
                     f"{4 / (1 + 4 / M ** 4):.6f} | {counted:.6f} |")
    return "\n".join(lines) + "\n"
