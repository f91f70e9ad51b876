"""Binary checkpoint container (FDCK): params, optimizer state, RNG, iteration."""

from __future__ import annotations

import json
import struct

import numpy as np

from .nn import ModelParams, UNetConfig
from .tensor import Tensor

_MAGIC = b"FDCK"
_VERSION = 1


def _write_blob(f, data: bytes):
    f.write(struct.pack("<I", len(data)))
    f.write(data)


def _read_blob(f):
    (n,) = struct.unpack("<I", f.read(4))
    return f.read(n)


def _write_tensors(f, tensors):
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        _write_blob(f, name.encode())
        a = np.asarray(arr, "<f4")
        f.write(struct.pack("<I", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def _read_tensors(f):
    (count,) = struct.unpack("<I", f.read(4))
    out = {}
    for _ in range(count):
        name = _read_blob(f).decode()
        (rank,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(f.read(4 * n), "<f4").reshape(shape).copy()
    return out


def save_checkpoint(path, params: ModelParams, opt=None, rng=None, iteration=0):
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        _write_blob(f, params.role.encode())
        _write_blob(f, json.dumps(params.config.to_dict(), sort_keys=True).encode())
        _write_tensors(f, {k: t.data for k, t in params.tensors.items()})
        if opt is not None:
            f.write(struct.pack("<B", 1))
            _write_tensors(f, opt.state_tensors())
            f.write(struct.pack("<Q", opt.step_count))
        else:
            f.write(struct.pack("<B", 0))
        state = json.dumps(rng.bit_generator.state if rng is not None else None)
        _write_blob(f, state.encode())
        f.write(struct.pack("<Q", iteration))


class Checkpoint:
    def __init__(self, params, opt_state, opt_steps, rng_state, iteration):
        self.params = params
        self.opt_state = opt_state
        self.opt_steps = opt_steps
        self.rng_state = rng_state
        self.iteration = iteration

    def make_rng(self):
        rng = np.random.default_rng()
        if self.rng_state is not None:
            rng.bit_generator.state = self.rng_state
        return rng

    def restore_optimizer(self, opt):
        if self.opt_state is None:
            raise ValueError("checkpoint carries no optimizer state")
        opt.load_state_tensors(self.opt_state)
        opt.step_count = self.opt_steps


def load_checkpoint(path, expected_role=None, requires_grad=True):
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an FDCK checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported FDCK version {version}")
        role = _read_blob(f).decode()
        if expected_role is not None and role != expected_role:
            raise ValueError(f"{path}: role mismatch, wanted '{expected_role}' "
                             f"but file holds '{role}'")
        cfg = UNetConfig.from_dict(json.loads(_read_blob(f).decode()))
        tensors = _read_tensors(f)
        (has_opt,) = struct.unpack("<B", f.read(1))
        opt_state, opt_steps = None, 0
        if has_opt:
            opt_state = _read_tensors(f)
            (opt_steps,) = struct.unpack("<Q", f.read(8))
        rng_state = json.loads(_read_blob(f).decode())
        (iteration,) = struct.unpack("<Q", f.read(8))
    params = ModelParams(cfg, role)
    for k, v in tensors.items():
        params.tensors[k] = Tensor(v, requires_grad=requires_grad)
    return Checkpoint(params, opt_state, opt_steps, rng_state, iteration)
