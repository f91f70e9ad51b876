"""Time-conditioned UNet shared by the teacher, students, and DDPM baseline.

Structure: stem conv -> per-level residual blocks with strided-conv
downsampling -> bottleneck block -> mirrored decoder with transposed-conv
upsampling and level-skip concatenation -> zero-initialized output conv.
A single self-attention block sits at the configured feature scale.
Residual blocks are GroupNorm -> SiLU -> conv, with the time embedding
projected in after the first conv.  The optional conditioning field is
concatenated channel-wise at the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class UNetConfig:
    field_size: int = 64
    base_channels: int = 32
    channel_mult: tuple = (1, 1, 1, 4)
    blocks_per_level: int = 2
    attention_resolution: int | None = 16
    in_channels: int = 1
    out_channels: int = 1
    cond_channels: int = 0          # extra input channels concatenated to z
    time_embed_dim: int = 128
    dropout: float = 0.0

    def __post_init__(self):
        if len(self.channel_mult) < 2:
            raise ValueError("channel_mult needs at least two levels")
        if self.dropout != 0.0:
            raise ValueError("dropout is fixed at 0")
        self.attention_level()  # validates placement

    def level_channels(self):
        return [self.base_channels * m for m in self.channel_mult]

    def attention_level(self):
        """Index of the level whose spatial side matches attention_resolution."""
        if self.attention_resolution is None:
            return None
        sides = [self.field_size >> i for i in range(len(self.channel_mult))]
        matches = [i for i, s in enumerate(sides) if s == self.attention_resolution]
        if len(matches) != 1:
            raise ValueError(
                f"attention_resolution {self.attention_resolution} must equal the "
                f"spatial side of exactly one level {sides}")
        return matches[0]

    def to_dict(self):
        return {
            "field_size": self.field_size,
            "base_channels": self.base_channels,
            "channel_mult": list(self.channel_mult),
            "blocks_per_level": self.blocks_per_level,
            "attention_resolution": self.attention_resolution,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "cond_channels": self.cond_channels,
            "time_embed_dim": self.time_embed_dim,
            "dropout": self.dropout,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["channel_mult"] = tuple(d["channel_mult"])
        return UNetConfig(**d)


@dataclass
class ModelParams:
    """Named tensor map for one network role."""

    config: UNetConfig
    role: str = "teacher"            # teacher | student | ema_student | ddpm
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors.keys())

    def count(self):
        return int(sum(t.size for t in self.tensors.values()))

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self, role=None, requires_grad=False):
        out = ModelParams(self.config, role or self.role)
        for k, t in self.tensors.items():
            out.tensors[k] = Tensor(t.data.copy(), requires_grad=requires_grad)
        return out

    def astype(self, dtype):
        out = ModelParams(self.config, self.role)
        for k, t in self.tensors.items():
            out.tensors[k] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
        return out


def _groups_for(channels):
    g = min(8, channels)
    if channels % g:
        raise ValueError(f"channel count {channels} not divisible by {g} groups; "
                         "use widths that are multiples of 8 (or below 8)")
    return g


def sinusoidal_freqs(dim, dtype=np.float32):
    """dim/2 angular frequencies log-spaced from 1 down to 1/10000."""
    if dim % 2:
        raise ValueError(f"sinusoidal embedding dim must be even, got {dim}")
    half = dim // 2
    if half == 1:
        return np.ones(1, dtype)
    k = np.arange(half, dtype=np.float64)
    return np.exp(-math.log(10000.0) * k / (half - 1)).astype(dtype)


def sinusoidal_embed(t, dim, dtype=np.float32):
    """[sin(t*w_k) | cos(t*w_k)] features for per-sample scalar times."""
    freqs = sinusoidal_freqs(dim, dtype)
    if isinstance(t, (Tensor, T.DualTensor)):
        return T.sin_cos_embed(t, freqs)
    t = np.atleast_1d(np.asarray(t, dtype))
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


# ---------------------------------------------------------------------------
# parameter initialization

def _conv_w(rng, kh, kw, ci, co, dtype, scale=1.0):
    std = scale / math.sqrt(kh * kw * ci)
    return Tensor(rng.standard_normal((kh, kw, ci, co)).astype(dtype) * dtype(std),
                  requires_grad=True)


def _lin_w(rng, di, do, dtype, scale=1.0):
    std = scale / math.sqrt(di)
    return Tensor(rng.standard_normal((di, do)).astype(dtype) * dtype(std),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype), requires_grad=True)


def init_unet(cfg: UNetConfig, rng, role="teacher", dtype=np.float32):
    """Freshly initialized parameters; the output conv starts at zero so the
    network is the identity map's perturbation early in training."""
    dtype = np.dtype(dtype).type
    p = ModelParams(cfg, role)
    t = p.tensors
    chans = cfg.level_channels()
    ted = cfg.time_embed_dim
    C0 = cfg.base_channels

    t["temb.w1"] = _lin_w(rng, C0, ted, dtype)
    t["temb.b1"] = _zeros(ted, dtype)
    t["temb.w2"] = _lin_w(rng, ted, ted, dtype)
    t["temb.b2"] = _zeros(ted, dtype)

    cin = cfg.in_channels + cfg.cond_channels
    t["stem.w"] = _conv_w(rng, 3, 3, cin, chans[0], dtype)
    t["stem.b"] = _zeros(chans[0], dtype)

    def res_block(prefix, ci, co):
        t[f"{prefix}.gn1.g"] = _ones(ci, dtype)
        t[f"{prefix}.gn1.b"] = _zeros(ci, dtype)
        t[f"{prefix}.conv1.w"] = _conv_w(rng, 3, 3, ci, co, dtype)
        t[f"{prefix}.conv1.b"] = _zeros(co, dtype)
        t[f"{prefix}.temb.w"] = _lin_w(rng, ted, co, dtype)
        t[f"{prefix}.temb.b"] = _zeros(co, dtype)
        t[f"{prefix}.gn2.g"] = _ones(co, dtype)
        t[f"{prefix}.gn2.b"] = _zeros(co, dtype)
        t[f"{prefix}.conv2.w"] = _conv_w(rng, 3, 3, co, co, dtype)
        t[f"{prefix}.conv2.b"] = _zeros(co, dtype)
        if ci != co:
            t[f"{prefix}.skip.w"] = _conv_w(rng, 1, 1, ci, co, dtype)
            t[f"{prefix}.skip.b"] = _zeros(co, dtype)

    def attn_block(prefix, c):
        t[f"{prefix}.gn.g"] = _ones(c, dtype)
        t[f"{prefix}.gn.b"] = _zeros(c, dtype)
        for nm in ("q", "k", "v"):
            t[f"{prefix}.{nm}.w"] = _lin_w(rng, c, c, dtype)
            t[f"{prefix}.{nm}.b"] = _zeros(c, dtype)
        t[f"{prefix}.proj.w"] = _lin_w(rng, c, c, dtype)
        t[f"{prefix}.proj.b"] = _zeros(c, dtype)

    prev = chans[0]
    for i, c in enumerate(chans):
        for b in range(cfg.blocks_per_level):
            res_block(f"enc.{i}.{b}", prev, c)
            prev = c
        if i < len(chans) - 1:
            t[f"down.{i}.w"] = _conv_w(rng, 3, 3, c, c, dtype)
            t[f"down.{i}.b"] = _zeros(c, dtype)

    if cfg.attention_resolution is not None:
        attn_block("attn", chans[cfg.attention_level()])
    res_block("mid", chans[-1], chans[-1])

    for i in reversed(range(len(chans))):
        c = chans[i]
        prev = chans[i + 1] if i + 1 < len(chans) else chans[-1]
        if i < len(chans) - 1:
            t[f"up.{i}.w"] = _conv_w(rng, 3, 3, prev, c, dtype)
            t[f"up.{i}.b"] = _zeros(c, dtype)
            prev = c
        res_block(f"dec.{i}.0", prev + c, c)
        for b in range(1, cfg.blocks_per_level):
            res_block(f"dec.{i}.{b}", c, c)

    t["out.gn.g"] = _ones(chans[0], dtype)
    t["out.gn.b"] = _zeros(chans[0], dtype)
    t["out.w"] = _zeros((3, 3, chans[0], cfg.out_channels), dtype)
    t["out.b"] = _zeros(cfg.out_channels, dtype)
    return p


# ---------------------------------------------------------------------------
# forward pass

class LayerNaNError(FloatingPointError):
    pass


def _check_finite(h, label):
    data = h.primal if isinstance(h, T.DualTensor) else h.data
    if not np.all(np.isfinite(data)):
        raise LayerNaNError(f"non-finite activations after layer '{label}'")


def _res_block(t, prefix, h, temb, groups_in, groups_out):
    y = T.group_norm(h, t[f"{prefix}.gn1.g"], t[f"{prefix}.gn1.b"], groups_in)
    y = T.silu(y)
    y = T.conv2d(y, t[f"{prefix}.conv1.w"], t[f"{prefix}.conv1.b"], stride=1, pad=1)
    emb = T.linear(T.silu(temb), t[f"{prefix}.temb.w"], t[f"{prefix}.temb.b"])
    y = T.add_channels(y, emb)
    y = T.group_norm(y, t[f"{prefix}.gn2.g"], t[f"{prefix}.gn2.b"], groups_out)
    y = T.silu(y)
    y = T.conv2d(y, t[f"{prefix}.conv2.w"], t[f"{prefix}.conv2.b"], stride=1, pad=1)
    if f"{prefix}.skip.w" in t:
        h = T.conv2d(h, t[f"{prefix}.skip.w"], t[f"{prefix}.skip.b"])
    y = T.add(y, h)
    _check_finite(y, prefix)
    return y


def _attn(t, h, side, channels):
    x = T.group_norm(h, t["attn.gn.g"], t["attn.gn.b"], _groups_for(channels))
    B = (x.primal if isinstance(x, T.DualTensor) else x.data).shape[0]
    flat = T.reshape(x, (B, side * side, channels))
    q = T.linear(flat, t["attn.q.w"], t["attn.q.b"])
    k = T.linear(flat, t["attn.k.w"], t["attn.k.b"])
    v = T.linear(flat, t["attn.v.w"], t["attn.v.b"])
    scores = T.mul(T.matmul(q, k, transpose_b=True), 1.0 / math.sqrt(channels))
    att = T.matmul(T.softmax(scores, axis=-1), v)
    att = T.linear(att, t["attn.proj.w"], t["attn.proj.b"])
    att = T.reshape(att, (B, side, side, channels))
    y = T.add(att, h)
    _check_finite(y, "attn")
    return y


def unet_forward(params: ModelParams, z, t, cond=None):
    """Evaluate the network; z is NHWC, t a per-sample scalar array.

    Works identically on Tensors (taped), DualTensors (forward-mode), and raw
    numpy arrays (wrapped as constants).
    """
    cfg = params.config
    tens = params.tensors
    if not isinstance(z, (Tensor, T.DualTensor)):
        z = Tensor(z)
    zdata = z.primal if isinstance(z, T.DualTensor) else z.data
    B, H, W, C = zdata.shape
    levels = len(cfg.channel_mult)
    if H % (1 << (levels - 1)) or W % (1 << (levels - 1)):
        raise T.ShapeError(f"unet_forward: {H}x{W} field not divisible by 2^{levels - 1}")
    if cfg.attention_resolution is not None and (H != cfg.field_size or W != cfg.field_size):
        raise T.ShapeError(f"unet_forward: field {H}x{W} does not match the "
                           f"configured size {cfg.field_size} (attention placement)")

    if cfg.cond_channels:
        if cond is None:
            cond = np.zeros((B, H, W, cfg.cond_channels), zdata.dtype)
        if not isinstance(cond, (Tensor, T.DualTensor)):
            cond = Tensor(np.asarray(cond, zdata.dtype))
        h = T.concat([z, cond], axis=-1)
    else:
        if cond is not None:
            raise ValueError("model was built without a conditioning channel")
        h = z

    if not isinstance(t, (Tensor, T.DualTensor)):
        t = Tensor(np.broadcast_to(np.asarray(t, zdata.dtype), (B,)).copy())

    temb = sinusoidal_embed(t, cfg.base_channels, zdata.dtype)
    temb = T.linear(temb, tens["temb.w1"], tens["temb.b1"])
    temb = T.linear(T.silu(temb), tens["temb.w2"], tens["temb.b2"])

    chans = cfg.level_channels()
    h = T.conv2d(h, tens["stem.w"], tens["stem.b"], stride=1, pad=1)

    side = H
    skips = []
    attn_done = False
    prev_c = chans[0]
    for i, c in enumerate(chans):
        for b in range(cfg.blocks_per_level):
            h = _res_block(tens, f"enc.{i}.{b}", h, temb,
                           _groups_for(prev_c), _groups_for(c))
            prev_c = c
        if cfg.attention_resolution == side and not attn_done:
            h = _attn(tens, h, side, c)
            attn_done = True
        skips.append(h)
        if i < levels - 1:
            h = T.conv2d(h, tens[f"down.{i}.w"], tens[f"down.{i}.b"], stride=2, pad=1)
            side //= 2

    h = _res_block(tens, "mid", h, temb, _groups_for(chans[-1]), _groups_for(chans[-1]))

    for i in reversed(range(levels)):
        c = chans[i]
        if i < levels - 1:
            h = T.conv2d_transpose(h, tens[f"up.{i}.w"], tens[f"up.{i}.b"],
                                   stride=2, pad=1, output_padding=1)
            side *= 2
        h = T.concat([h, skips[i]], axis=-1)
        hc = (h.primal if isinstance(h, T.DualTensor) else h.data).shape[-1]
        h = _res_block(tens, f"dec.{i}.0", h, temb, _groups_for(hc), _groups_for(c))
        for b in range(1, cfg.blocks_per_level):
            h = _res_block(tens, f"dec.{i}.{b}", h, temb, _groups_for(c), _groups_for(c))

    h = T.group_norm(h, tens["out.gn.g"], tens["out.gn.b"], _groups_for(chans[0]))
    h = T.silu(h)
    h = T.conv2d(h, tens["out.w"], tens["out.b"], stride=1, pad=1)
    _check_finite(h, "out")
    return h
