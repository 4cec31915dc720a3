"""Dual-path denoising network.

The low-frequency band runs through a strided conv trunk that forks into a
content branch (skip features for reconstruction) and a texture branch
(transformer encoder input). The high-frequency band is folded space-to-depth
and refined by convs, then three decoder layers query it against the encoded
low-frequency tokens. Reconstruction re-injects the content skips around two
pixel-shuffle upsampling stages.

Channel widths scale with ``ModelConfig.width``; 1.0 is the full-size
network (64/128/256 channel tiers), 0.25 is a desk-size variant that keeps
every shape relation intact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optim import xavier_init
from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    concat,
    conv2d,
    leaky_relu,
    linear,
    matmul,
    pixel_shuffle,
    pixel_unshuffle,
    reshape,
    softmax,
    transpose,
)

VARIANTS = ("full", "no_transformer", "no_dual_path")

HF_FOLD = 16  # space-to-depth factor on the high band
N_STAGES = 3  # encoder and decoder depth


@dataclass(frozen=True)
class ModelConfig:
    width: float = 1.0
    n_heads: int = 4
    ffn_mult: int = 8
    lrelu_slope: float = 0.2
    sigma: float = 1.5
    variant: str = "full"
    use_positional: bool = False
    pos_image_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for base in (64, 128, 256):
            scaled = base * self.width
            if abs(scaled - round(scaled)) > 1e-9 or round(scaled) < 1:
                raise ValueError(
                    f"width {self.width} does not scale the {base}-channel tier "
                    f"to a whole number"
                )
        if self.channels(256) % self.n_heads != 0:
            raise ValueError(
                f"{self.channels(256)} token channels do not split into "
                f"{self.n_heads} heads"
            )
        if self.ffn_mult < 1:
            raise ValueError(f"ffn_mult must be >= 1, got {self.ffn_mult}")
        if not 0.0 < self.lrelu_slope < 1.0:
            raise ValueError(f"lrelu_slope must lie in (0,1), got {self.lrelu_slope}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.use_positional and self.pos_image_size % 32 != 0:
            raise ValueError("pos_image_size must be a multiple of 32")

    def channels(self, base):
        return int(round(base * self.width))


class Module:
    """Composite of parameters and sub-modules, walkable by name."""

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            path = f"{prefix}.{name}" if prefix else name
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def count_parameters(module):
    return sum(int(np.prod(p.shape)) for p in module.parameters())


# -- layers ---------------------------------------------------------------


class Conv2d(Module):
    def __init__(self, cin, cout, rng, k=3, stride=1):
        self.stride = stride
        self.weight = Parameter(xavier_init((cout, cin, k, k), rng), "weight")
        self.bias = Parameter(np.zeros(cout, dtype=np.float32), "bias")

    def __call__(self, x):
        return conv2d(x, self.weight.value, self.bias.value, stride=self.stride)


class ConvAct(Module):
    """3x3 conv followed by leaky ReLU."""

    def __init__(self, cin, cout, rng, stride=1, slope=0.2):
        self.conv = Conv2d(cin, cout, rng, stride=stride)
        self.slope = slope

    def __call__(self, x):
        return leaky_relu(self.conv(x), self.slope)


class Linear(Module):
    def __init__(self, cin, cout, rng):
        self.weight = Parameter(xavier_init((cin, cout), rng), "weight")
        self.bias = Parameter(np.zeros(cout, dtype=np.float32), "bias")

    def __call__(self, x):
        return linear(x, self.weight.value, self.bias.value)


class ResBlock(Module):
    """conv-lrelu-conv plus skip; the skip is a 1x1 projection when the
    channel count changes, identity otherwise."""

    def __init__(self, cin, cout, rng, slope=0.2):
        self.conv1 = Conv2d(cin, cout, rng)
        self.conv2 = Conv2d(cout, cout, rng)
        self.proj = Conv2d(cin, cout, rng, k=1) if cin != cout else None
        self.slope = slope

    def __call__(self, x):
        y = self.conv2(leaky_relu(self.conv1(x), self.slope))
        skip = x if self.proj is None else self.proj(x)
        return add(y, skip)


class MultiHeadAttention(Module):
    """softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated and
    mixed by an output projection. Cross attention when ``kv`` differs
    from the query stream."""

    def __init__(self, dim, n_heads, rng):
        if dim % n_heads != 0:
            raise ShapeError(f"{dim} channels do not split into {n_heads} heads")
        self.n_heads = n_heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, q, kv=None):
        kv = q if kv is None else kv
        B, N, C = q.shape
        M = kv.shape[1]
        h = self.n_heads
        d = C // h
        qh = transpose(reshape(self.wq(q), (B, N, h, d)), (0, 2, 1, 3))
        kh = transpose(reshape(self.wk(kv), (B, M, h, d)), (0, 2, 3, 1))
        vh = transpose(reshape(self.wv(kv), (B, M, h, d)), (0, 2, 1, 3))
        scores = matmul(qh, kh) * (1.0 / math.sqrt(d))
        attn = softmax(scores, axis=-1)
        ctx = transpose(matmul(attn, vh), (0, 2, 1, 3))
        return self.wo(reshape(ctx, (B, N, C)))


class FeedForward(Module):
    """Token-wise two-layer MLP, hidden width ``mult`` times the channels."""

    def __init__(self, dim, mult, rng, slope=0.2):
        self.fc1 = Linear(dim, mult * dim, rng)
        self.fc2 = Linear(mult * dim, dim, rng)
        self.slope = slope

    def __call__(self, x):
        return self.fc2(leaky_relu(self.fc1(x), self.slope))


class EncoderLayer(Module):
    """Self-attention and FFN, each wrapped in a residual sum."""

    def __init__(self, dim, n_heads, ffn_mult, rng, slope=0.2):
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.ffn = FeedForward(dim, ffn_mult, rng, slope)

    def __call__(self, s):
        s = add(self.attn(s), s)
        return add(self.ffn(s), s)


class DecoderLayer(Module):
    """Self-attention, cross-attention against the encoder memory, FFN;
    every stage wrapped in a residual sum."""

    def __init__(self, dim, n_heads, ffn_mult, rng, slope=0.2):
        self.self_attn = MultiHeadAttention(dim, n_heads, rng)
        self.cross_attn = MultiHeadAttention(dim, n_heads, rng)
        self.ffn = FeedForward(dim, ffn_mult, rng, slope)

    def __call__(self, s, memory, trace=None):
        s = add(self.self_attn(s), s)
        if trace is not None:
            trace["memory_reads"] = trace.get("memory_reads", 0) + 1
        s = add(self.cross_attn(s, memory), s)
        return add(self.ffn(s), s)


# -- token plumbing -------------------------------------------------------


@dataclass
class TokenSeq:
    """(B, N, C) token tensor remembering its source feature-map extents."""

    tokens: Tensor
    h: int
    w: int


def tokenize(x):
    B, C, H, W = x.shape
    t = reshape(transpose(x, (0, 2, 3, 1)), (B, H * W, C))
    return TokenSeq(tokens=t, h=H, w=W)


def detokenize(seq):
    B, N, C = seq.tokens.shape
    if N != seq.h * seq.w:
        raise ShapeError(f"{N} tokens do not tile a {seq.h}x{seq.w} map")
    return transpose(reshape(seq.tokens, (B, seq.h, seq.w, C)), (0, 3, 1, 2))


# -- the network ----------------------------------------------------------


class TransCT(Module):
    """See the module docstring; ``variant`` selects the full network or
    one of the reduced forms used for ablation."""

    def __init__(self, config):
        if not isinstance(config, ModelConfig):
            config = ModelConfig(**config)
        self.config = config
        rng = np.random.default_rng(config.seed)
        c64 = config.channels(64)
        c128 = config.channels(128)
        c256 = config.channels(256)
        slope = config.lrelu_slope
        variant = config.variant

        # low-band trunk and content skips (every variant)
        self.trunk1 = ConvAct(1, c64, rng, stride=2, slope=slope)
        self.trunk2 = ConvAct(c64, c64, rng, stride=2, slope=slope)
        self.content1 = ConvAct(c64, c64, rng, stride=2, slope=slope)
        self.content2 = ConvAct(c64, c256, rng, stride=2, slope=slope)

        if variant != "no_dual_path":
            # texture branch off the trunk
            self.tex1 = ConvAct(c64, c128, rng, stride=2, slope=slope)
            self.tex2 = ConvAct(c128, c128, rng, stride=2, slope=slope)
            if variant == "full":
                self.tex3 = ConvAct(c128, c256, rng, stride=2, slope=slope)
            # high-band path on folded pixels
            self.hf1 = ConvAct(HF_FOLD * HF_FOLD, c256, rng, slope=slope)
            self.hf2 = ConvAct(c256, c256, rng, slope=slope)
            self.hf3 = ConvAct(c256, c256, rng, slope=slope)

        if variant == "full":
            self.encoders = [
                EncoderLayer(c256, config.n_heads, config.ffn_mult, rng, slope)
                for _ in range(N_STAGES)
            ]
            self.decoders = [
                DecoderLayer(c256, config.n_heads, config.ffn_mult, rng, slope)
                for _ in range(N_STAGES)
            ]
        elif variant == "no_transformer":
            self.fuse = ConvAct(c256 + c128, c256, rng, slope=slope)
            self.fuse_blocks = [ResBlock(c256, c256, rng, slope) for _ in range(N_STAGES)]
        else:  # no_dual_path: encoders only, fed by the content column
            self.encoders = [
                EncoderLayer(c256, config.n_heads, config.ffn_mult, rng, slope)
                for _ in range(N_STAGES)
            ]

        # reconstruction: two pixel-shuffle stages with content skips; the
        # second block always emits 64 channels so that the final r=8
        # shuffle lands on a single image plane.
        self.res1 = ResBlock(c256, c256, rng, slope)
        self.res2 = ResBlock(c64, 64, rng, slope)

        if config.use_positional:
            s = config.pos_image_size
            fold = 16 if variant == "no_dual_path" else 32
            self.pos_enc = Parameter(
                xavier_init(((s // fold) ** 2, c256), rng), "pos_enc"
            )
            if variant == "full":
                self.pos_dec = Parameter(
                    xavier_init(((s // 16) ** 2, c256), rng), "pos_dec"
                )

    # -- forward paths ----------------------------------------------------

    def __call__(self, x_low, x_high, trace=None):
        return self.forward(x_low, x_high, trace)

    def forward(self, x_low, x_high, trace=None):
        """Both inputs are (B, 1, H, W) tensors with H, W multiples of 32;
        returns the denoised (B, 1, H, W) image. ``trace`` (a dict), when
        given, records intermediate shapes and the number of encoder-memory
        reads."""
        self._check_inputs(x_low, x_high)
        variant = self.config.variant
        if variant == "full":
            out = self._forward_full(x_low, x_high, trace)
        elif variant == "no_transformer":
            out = self._forward_no_transformer(x_low, x_high, trace)
        else:
            out = self._forward_no_dual_path(x_low, x_high, trace)
        if trace is not None:
            trace["out"] = out.shape
        return out

    def _check_inputs(self, x_low, x_high):
        for name, t in (("x_low", x_low), ("x_high", x_high)):
            if t.ndim != 4 or t.shape[1] != 1:
                raise ShapeError(f"{name} must be (B, 1, H, W), got {t.shape}")
        if x_low.shape != x_high.shape:
            raise ShapeError(
                f"band shapes disagree: {x_low.shape} vs {x_high.shape}"
            )
        H, W = x_low.shape[2], x_low.shape[3]
        if H % 32 or W % 32:
            raise ShapeError(
                f"spatial extents must be multiples of 32 for the 16-fold "
                f"high band and the 32x texture downsampling, got {H}x{W}"
            )

    def _content_column(self, x_low, trace):
        t = self.trunk2(self.trunk1(x_low))
        c1 = self.content1(t)
        c2 = self.content2(c1)
        if trace is not None:
            trace["trunk"] = t.shape
            trace["x_lc1"] = c1.shape
            trace["x_lc2"] = c2.shape
        return t, c1, c2

    def _reconstruct(self, y, c1, c2, trace):
        r1 = self.res1(add(y, c2))
        u1 = pixel_shuffle(r1, 2)
        r2 = self.res2(add(u1, c1))
        if trace is not None:
            trace["stage1"] = u1.shape
            trace["stage2"] = r2.shape
        return pixel_shuffle(r2, 8)

    def _hf_features(self, x_high, trace):
        hf = self.hf3(self.hf2(self.hf1(pixel_unshuffle(x_high, HF_FOLD))))
        if trace is not None:
            trace["x_hf"] = hf.shape
        return hf

    def _forward_full(self, x_low, x_high, trace):
        t, c1, c2 = self._content_column(x_low, trace)
        tx = self.tex3(self.tex2(self.tex1(t)))
        hf = self._hf_features(x_high, trace)
        if trace is not None:
            trace["x_lt"] = tx.shape

        s_l = tokenize(tx)
        s_h = tokenize(hf)
        if trace is not None:
            trace["s_l"] = s_l.tokens.shape
            trace["s_h"] = s_h.tokens.shape

        lt = s_l.tokens
        ht = s_h.tokens
        if self.config.use_positional:
            lt = add(lt, self.pos_enc.value)
            ht = add(ht, self.pos_dec.value)
        for enc in self.encoders:
            lt = enc(lt)
        memory = lt
        for dec in self.decoders:
            ht = dec(ht, memory, trace)
        y = detokenize(TokenSeq(ht, s_h.h, s_h.w))
        if trace is not None:
            trace["y"] = y.shape
        return self._reconstruct(y, c1, c2, trace)

    def _forward_no_transformer(self, x_low, x_high, trace):
        t, c1, c2 = self._content_column(x_low, trace)
        tx = self.tex2(self.tex1(t))
        hf = self._hf_features(x_high, trace)
        fused = self.fuse(concat([hf, tx], axis=1))
        for block in self.fuse_blocks:
            fused = block(fused)
        if trace is not None:
            trace["y"] = fused.shape
        return self._reconstruct(fused, c1, c2, trace)

    def _forward_no_dual_path(self, x_low, x_high, trace):
        x = add(x_low, x_high)
        _, c1, c2 = self._content_column(x, trace)
        s = tokenize(c2)
        if trace is not None:
            trace["s_l"] = s.tokens.shape
        tokens = s.tokens
        if self.config.use_positional:
            tokens = add(tokens, self.pos_enc.value)
        for enc in self.encoders:
            tokens = enc(tokens)
        y = detokenize(TokenSeq(tokens, s.h, s.w))
        if trace is not None:
            trace["y"] = y.shape
        return self._reconstruct(y, c1, c2, trace)


def build_model(config):
    """Construct the network for a ModelConfig (or a kwargs mapping)."""
    return TransCT(config)
