"""Experiment configuration: flat key-value sections with override support."""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field

from .ddpm import DiffusionTrainConfig
from .fm import FMTrainConfig
from .kolmogorov import GRFConfig, SolverConfig
from .nn import UNetConfig
from .trig import SCDConfig

_LIST_KEYS = {"channel_mult"}


def _coerce(value):
    s = value.strip()
    if "," in s:
        return tuple(_coerce(v) for v in s.split(","))
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


@dataclass
class RunConfig:
    raw: dict = field(default_factory=dict)
    path: str = ""

    def section(self, name):
        return dict(self.raw.get(name, {}))

    def get(self, section, key, default=None):
        return self.raw.get(section, {}).get(key, default)

    def config_hash(self):
        blob = repr(sorted((s, sorted(kv.items())) for s, kv in self.raw.items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- typed views ---------------------------------------------------------
    def solver_config(self):
        d = self.section("data")
        return SolverConfig(
            N=d.get("grid", 64), re=d.get("re", 1000.0), dt=d.get("dt", 1e-3),
            forcing_amp=d.get("forcing_amp", 0.1),
            record_stride=d.get("record_stride", 40),
            snapshots_per_traj=d.get("snapshots_per_traj", 250),
            burn_in_steps=d.get("burn_in_steps", 8000),
            seed=d.get("seed", self.get("run", "seed", 42)))

    def grf_config(self):
        d = self.section("data")
        return GRFConfig(alpha=d.get("grf_alpha", 2.5), tau_corr=d.get("grf_tau", 7.0))

    def unet_config(self, role):
        d = self.section(f"{role}.arch")
        data = self.section("data")
        mult = d.get("channel_mult", (1, 1, 1, 4))
        if isinstance(mult, (int, float)):
            mult = (int(mult),)
        return UNetConfig(
            field_size=data.get("grid", 64),
            base_channels=d.get("base_channels", 32),
            channel_mult=tuple(int(m) for m in mult),
            blocks_per_level=d.get("blocks_per_level", 2),
            attention_resolution=d.get("attention_resolution", 16),
            in_channels=d.get("in_channels", 1),
            out_channels=d.get("out_channels", 1),
            cond_channels=d.get("cond_channels", 0),
            time_embed_dim=d.get("time_embed_dim", 128))

    def fm_config(self):
        d = self.section("fm")
        return FMTrainConfig(
            p_mu=d.get("p_mu", -0.4), p_sigma=d.get("p_sigma", 1.0),
            t_eps=d.get("t_eps", 1e-3), lr=d.get("lr", 1e-4),
            lr_schedule=d.get("lr_schedule", "constant"),
            lr_floor=d.get("lr_floor", 1e-5),
            weight_decay=d.get("weight_decay", 0.0),
            grad_clip_norm=d.get("grad_clip_norm", 1.0),
            batch=d.get("batch", 8), epochs=d.get("epochs", 1),
            steps=d.get("steps", 0), seed=d.get("seed", self.get("run", "seed", 42)),
            adaptive_weighting=d.get("adaptive_weighting", False),
            condition_channel=d.get("condition_channel", False))

    def scd_config(self):
        d = self.section("scd")
        return SCDConfig(
            ema_rate=d.get("ema_rate", 0.98),
            tangent_clip=d.get("tangent_clip", 1.0),
            tangent_warmup_iters=d.get("tangent_warmup_iters", 500),
            p_mu=d.get("p_mu", -0.4), p_sigma=d.get("p_sigma", 0.8),
            t_eps=d.get("t_eps", 1e-6), lr=d.get("lr", 2e-5),
            grad_clip_norm=d.get("grad_clip_norm", 1.0),
            batch=d.get("batch", 8), epochs=d.get("epochs", 1),
            steps=d.get("steps", 0), seed=d.get("seed", self.get("run", "seed", 42)))

    def ddpm_config(self):
        d = self.section("ddpm")
        return DiffusionTrainConfig(
            T=d.get("t_steps", 1000), schedule=d.get("schedule", "cosine"),
            lr=d.get("lr", 1e-4), grad_clip_norm=d.get("grad_clip_norm", 1.0),
            batch=d.get("batch", 8), epochs=d.get("epochs", 1),
            steps=d.get("steps", 0), seed=d.get("seed", self.get("run", "seed", 42)))


def load_config(path, overrides=()):
    """Parse an INI-style config; overrides are 'section.key=value' strings."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        parser.read_file(f)
    raw = {}
    for section in parser.sections():
        raw[section] = {k: _coerce(v) for k, v in parser.items(section)}
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ValueError(f"override must look like section.key=value, got '{ov}'")
        key, value = ov.split("=", 1)
        section, k = key.rsplit(".", 1)
        raw.setdefault(section, {})[k.strip()] = _coerce(value)
    return RunConfig(raw, str(path))


def thread_cap():
    """Parallelism cap from the environment (0 or unset means serial)."""
    try:
        return max(0, int(os.environ.get("FLOWDISTILL_THREADS", "0")))
    except ValueError:
        return 0
