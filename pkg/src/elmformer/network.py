"""The U-shaped restoration network and its checkpoint format.

Pipeline for a ``1×H×W`` mosaic:

    BFP -> [2 blocks, 4x4/s2 downsample] x K -> 2 bottleneck blocks
        -> [2x2/s2 upsample, skip merge, 2 blocks] x K
        -> 2x2/s2 upsample to H×W -> 3x3 conv to one channel -> input + residual

Stage ``s`` runs at ``C·2^s`` channels and ``H/2^(s+1)`` resolution. The
final conv starts at zero, so a freshly built network is the identity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import params as P
from .attention import BlockWeights, init_block, lmwin_block
from .bayer import RawImage
from .bfp import BfpWeights, as_batch, bfp_forward, init_bfp
from .config import format_kv, from_kv, parse_kv, to_kv
from .numerics import ConfigError, ConvSpec, ShapeError, Tensor, conv2d, ops, transposed_conv2d

BLOCKS_PER_STAGE = 2
HEAD_DIM = 16


@dataclass
class ElmformerConfig:
    base_channels: int = 32
    depth: int = 4
    window_size: int = 8
    bottleneck_window: int = 4
    heads_per_stage: Optional[list[int]] = None  # depth + 1 entries, bottleneck last
    seed: int = 0

    def stage_channels(self, s: int) -> int:
        return self.base_channels * 2 ** s

    def heads(self, s: int) -> int:
        if self.heads_per_stage:
            return self.heads_per_stage[s]
        return max(1, self.stage_channels(s) // HEAD_DIM)

    def window(self, s: int) -> int:
        return self.bottleneck_window if s == self.depth else self.window_size

    def check(self, height: int | None = None, width: int | None = None) -> None:
        """Raise ConfigError naming the first stage whose extents do not fit."""
        C, K = self.base_channels, self.depth
        if C < 2 or C % 2:
            raise ConfigError(f"base_channels must be even and >= 2, got {C}")
        if K < 0:
            raise ConfigError(f"depth must be non-negative, got {K}")
        if self.heads_per_stage is not None and len(self.heads_per_stage) != K + 1:
            raise ConfigError(f"heads_per_stage needs {K + 1} entries, got {len(self.heads_per_stage)}")
        for s in range(K + 1):
            name = "bottleneck" if s == K else f"stage {s}"
            ch, hd, M = self.stage_channels(s), self.heads(s), self.window(s)
            if hd < 1 or ch % hd:
                raise ConfigError(f"{name}: {ch} channels not divisible by {hd} heads")
            if M < 2 or M % 2:
                raise ConfigError(f"{name}: window {M} must be even")
        if height is None or width is None:
            return
        if height % 2 or width % 2:
            raise ConfigError(f"input {height}x{width}: extents must be even")
        h, w = height // 2, width // 2
        if h < 3 or w < 3:
            raise ConfigError(f"input {height}x{width}: too small for the projection")
        for s in range(K + 1):
            name = "bottleneck" if s == K else f"stage {s}"
            M = self.window(s)
            if h % M or w % M:
                raise ConfigError(f"{name}: feature {h}x{w} not divisible by window {M}")
            if s < K:
                if h % 2 or w % 2:
                    raise ConfigError(f"{name}: feature {h}x{w} cannot be halved")
                h, w = h // 2, w // 2

    def architecture(self) -> dict:
        """Everything that determines parameter shapes (the seed does not)."""
        return {"base_channels": self.base_channels, "depth": self.depth,
                "window_size": self.window_size, "bottleneck_window": self.bottleneck_window,
                "heads": [self.heads(s) for s in range(self.depth + 1)]}

    def to_text(self) -> str:
        return format_kv(to_kv(self))

    @classmethod
    def from_text(cls, text: str) -> "ElmformerConfig":
        return from_kv(cls, parse_kv(text))


@dataclass
class EncoderStage:
    blocks: list[BlockWeights]
    down: Tensor
    down_bias: Tensor


@dataclass
class DecoderStage:
    up: Tensor
    up_bias: Tensor
    merge: Tensor
    merge_bias: Tensor
    blocks: list[BlockWeights]


@dataclass
class ElmformerWeights:
    config: ElmformerConfig
    bfp: BfpWeights
    encoders: list[EncoderStage]
    bottleneck: list[BlockWeights]
    decoders: list[DecoderStage]  # execution order, deepest first
    out_up: Tensor
    out_up_bias: Tensor
    out_conv: Tensor
    out_conv_bias: Tensor


def build(config: ElmformerConfig, height: int | None = None, width: int | None = None) -> ElmformerWeights:
    """Deterministically initialise all weights from ``config.seed``."""
    config.check(height, width)
    rng = np.random.default_rng(config.seed)
    C, K = config.base_channels, config.depth

    def blocks(s):
        return [init_block(config.stage_channels(s), config.heads(s), config.window(s), rng)
                for _ in range(BLOCKS_PER_STAGE)]

    bfp = init_bfp(C, rng)
    encoders = []
    for s in range(K):
        ch = config.stage_channels(s)
        encoders.append(EncoderStage(blocks(s), P.conv_uniform(rng, (2 * ch, ch, 4, 4)), P.zeros(2 * ch)))
    bottleneck = blocks(K)
    decoders = []
    for s in reversed(range(K)):
        ch = config.stage_channels(s)
        decoders.append(DecoderStage(P.conv_uniform(rng, (2 * ch, ch, 2, 2)), P.zeros(ch),
                                     P.conv_uniform(rng, (ch, 2 * ch, 1, 1)), P.zeros(ch), blocks(s)))
    return ElmformerWeights(
        config, bfp, encoders, bottleneck, decoders,
        P.conv_uniform(rng, (C, C // 2, 2, 2)), P.zeros(C // 2),
        P.zeros(1, C // 2, 3, 3), P.zeros(1),
    )


def skip_merge(decoder_feat: Tensor, encoder_feat: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Concatenate decoder then encoder channels and mix back to stage width with a 1x1 conv."""
    if decoder_feat.shape[-2:] != encoder_feat.shape[-2:]:
        raise ShapeError(f"skip extents differ: decoder {decoder_feat.shape} vs encoder {encoder_feat.shape}")
    axis = decoder_feat.ndim - 3
    cat = ops.concat([decoder_feat, encoder_feat], axis=axis)
    out_ch, in_ch = kernel.shape[:2]
    return conv2d(cat, ConvSpec(1, 1, 1, 0, in_ch, out_ch), kernel, bias)


def forward_tensor(x: Tensor, w: ElmformerWeights) -> Tensor:
    """``B×1×H×W`` in, ``B×1×H×W`` out (input plus predicted residual)."""
    cfg = w.config
    B, _, H, W = x.shape
    try:
        cfg.check(H, W)
    except ConfigError as e:
        raise ShapeError(str(e)) from None
    f = bfp_forward(x, w.bfp)
    skips = []
    for s, enc in enumerate(w.encoders):
        for blk in enc.blocks:
            f = lmwin_block(f, blk, cfg.window(s))
        skips.append(f)
        ch = cfg.stage_channels(s)
        f = conv2d(f, ConvSpec(4, 4, 2, 1, ch, 2 * ch), enc.down, enc.down_bias)
    for blk in w.bottleneck:
        f = lmwin_block(f, blk, cfg.window(cfg.depth))
    for dec, s in zip(w.decoders, reversed(range(cfg.depth))):
        ch = cfg.stage_channels(s)
        f = transposed_conv2d(f, ConvSpec(2, 2, 2, 0, 2 * ch, ch), dec.up, dec.up_bias)
        f = skip_merge(f, skips[s], dec.merge, dec.merge_bias)
        for blk in dec.blocks:
            f = lmwin_block(f, blk, cfg.window(s))
    C = cfg.base_channels
    r = transposed_conv2d(f, ConvSpec(2, 2, 2, 0, C, C // 2), w.out_up, w.out_up_bias)
    r = conv2d(r, ConvSpec(3, 3, 1, 1, C // 2, 1), w.out_conv, w.out_conv_bias)
    return ops.add(x, r)


def forward(raw, w: ElmformerWeights):
    """Restore a RawImage (returns RawImage) or a tensor batch (returns Tensor).

    Output values are not clamped.
    """
    if isinstance(raw, RawImage):
        out = forward_tensor(Tensor(raw.data[None, None]), w)
        return RawImage(out.data[0, 0], raw.cfa, raw.black_level, raw.white_level)
    x, single = as_batch(raw)
    out = forward_tensor(x, w)
    return ops.reshape(out, raw.shape) if single else out


# checkpoints ------------------------------------------------------------------------

CKPT_MAGIC = b"ELMC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class OptimizerMoments:
    step: int
    m: np.ndarray
    v: np.ndarray


@dataclass
class Checkpoint:
    config: ElmformerConfig
    params: np.ndarray
    step: int = 0
    optimizer: Optional[OptimizerMoments] = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, w: ElmformerWeights, step: int = 0, optimizer: OptimizerMoments | None = None,
                    extra: dict | None = None) -> None:
    """Layout (little-endian): magic, u32 version, u32 len + config text, u32 len +
    extra text, u64 step, u64 count, f64 params, u8 has_opt, [u64 opt step, f64 m, f64 v]."""
    flat = P.flatten(w)
    cfg = w.config.to_text().encode()
    ext = format_kv(extra or {}).encode() if extra else b""
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION),
             struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(ext)), ext,
             struct.pack("<QQ", step, flat.size), flat.astype("<f8").tobytes()]
    if optimizer is None:
        parts.append(b"\x00")
    else:
        if optimizer.m.size != flat.size or optimizer.v.size != flat.size:
            raise CheckpointError("optimizer moments do not match parameter count")
        parts += [b"\x01", struct.pack("<Q", optimizer.step),
                  optimizer.m.astype("<f8").tobytes(), optimizer.v.astype("<f8").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", take(4))
    config = ElmformerConfig.from_text(take(n).decode())
    (n,) = struct.unpack("<I", take(4))
    extra = parse_kv(take(n).decode()) if n else {}
    step, count = struct.unpack("<QQ", take(16))
    expected = P.count_params(build(config))
    if count != expected:
        raise CheckpointError(f"{path}: stores {count} parameters, config implies {expected}")
    params = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
    opt = None
    if take(1) == b"\x01":
        (ostep,) = struct.unpack("<Q", take(8))
        m = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        v = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        opt = OptimizerMoments(ostep, m, v)
    if pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes")
    return Checkpoint(config, params, step, opt, extra)


def load_weights(ckpt: Checkpoint, into: ElmformerWeights | None = None) -> ElmformerWeights:
    """Materialise checkpoint parameters; refuses a model built from another config."""
    if into is None:
        into = build(ckpt.config)
    elif into.config.architecture() != ckpt.config.architecture():
        raise CheckpointError(f"checkpoint architecture {ckpt.config.architecture()} "
                              f"does not match model {into.config.architecture()}")
    try:
        P.unflatten_into(into, ckpt.params)
    except ValueError as e:
        raise CheckpointError(str(e)) from None
    return into
