"""Miniature Kolmogorov-flow dataset: solver, degrade pipeline, container.

The flow is 2-D incompressible turbulence in vorticity-streamfunction form on
the periodic unit square,

    dw/dt + u . grad(w) = nu Lap(w) + g,    u = (psi_y, -psi_x),  Lap(psi) = -w,

driven by the steady sinusoidal source g = 0.1 [sin(2 pi (x+y)) + cos(2 pi (x+y))]
(the curl of the body force) at Re = 1000.  Time stepping is pseudo-spectral:
Crank-Nicolson on the viscous term, forward Euler on advection and forcing,
with the quadratic term formed in physical space and 2/3-truncated.

Snapshots are recorded after a burn-in, stride-subsampled and nearest-neighbour
upsampled into low-resolution companions, normalized by training-split
statistics, and stored in the versioned binary container (FFD1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


@dataclass
class SolverConfig:
    N: int = 64
    re: float = 1000.0
    dt: float = 1e-3
    forcing_amp: float = 0.1
    record_stride: int = 40          # solver steps between recorded snapshots
    snapshots_per_traj: int = 250
    burn_in_steps: int = 8000
    seed: int = 42

    def __post_init__(self):
        if self.N & (self.N - 1):
            raise ValueError("grid size must be a power of two")
        if not (self.dt > 0 and self.re > 0):
            raise ValueError("dt and Re must be positive")

    @property
    def nu(self):
        return 1.0 / self.re


@dataclass
class GRFConfig:
    alpha: float = 2.5
    tau_corr: float = 7.0            # correlation scale of the init spectrum
    amplitude: float = 1.0           # rms of the initial vorticity

    def __post_init__(self):
        if not (self.alpha > 1 and self.tau_corr > 0):
            raise ValueError("invalid random-field config")


class SpectralOps:
    """Precomputed wavenumber grids, inverse Laplacian, and the 2/3 mask."""

    def __init__(self, N):
        m = np.fft.fftfreq(N, d=1.0 / N)          # integer wavenumbers
        self.mx = m[None, :] * np.ones((N, 1))
        self.my = m[:, None] * np.ones((1, N))
        self.kx = 2.0 * np.pi * self.mx
        self.ky = 2.0 * np.pi * self.my
        self.k2 = self.kx**2 + self.ky**2
        k2inv = np.zeros_like(self.k2)
        nz = self.k2 > 0
        k2inv[nz] = 1.0 / self.k2[nz]
        self.k2inv = k2inv
        cutoff = N / 3.0
        self.dealias = (np.abs(self.mx) <= cutoff) & (np.abs(self.my) <= cutoff)
        self.N = N


def velocity_from_vorticity(omega_hat, ops: SpectralOps):
    """Streamfunction solve: u = d psi/dy, v = -d psi/dx with Lap(psi) = -w."""
    psi_hat = omega_hat * ops.k2inv
    u = np.real(np.fft.ifft2(1j * ops.ky * psi_hat))
    v = np.real(np.fft.ifft2(-1j * ops.kx * psi_hat))
    return u, v


def divergence_max(omega_hat, ops: SpectralOps):
    """max |div u| of the reconstructed velocity (spectral evaluation)."""
    psi_hat = omega_hat * ops.k2inv
    u_hat = 1j * ops.ky * psi_hat
    v_hat = -1j * ops.kx * psi_hat
    div = np.fft.ifft2(1j * ops.kx * u_hat + 1j * ops.ky * v_hat)
    return float(np.max(np.abs(div)))


def forcing_source(cfg: SolverConfig, N):
    """Vorticity source on the grid: amp [sin(2 pi (x+y)) + cos(2 pi (x+y))]."""
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x, indexing="xy")
    phase = 2.0 * np.pi * (X + Y)
    return cfg.forcing_amp * (np.sin(phase) + np.cos(phase))


class BlowUpError(RuntimeError):
    pass


def kolmogorov_step(omega_hat, ops: SpectralOps, cfg: SolverConfig,
                    forcing_hat=None, nu=None):
    """One Crank-Nicolson / explicit-advection step in spectral space."""
    nu = cfg.nu if nu is None else nu
    dt = cfg.dt
    u, v = velocity_from_vorticity(omega_hat, ops)
    om_x = np.real(np.fft.ifft2(1j * ops.kx * omega_hat))
    om_y = np.real(np.fft.ifft2(1j * ops.ky * omega_hat))
    nonlin_hat = ops.dealias * np.fft.fft2(u * om_x + v * om_y)
    rhs = -nonlin_hat
    if forcing_hat is not None:
        rhs = rhs + forcing_hat
    half = 0.5 * nu * ops.k2 * dt
    return ((1.0 - half) * omega_hat + dt * rhs) / (1.0 + half)


def init_grf_vorticity(cfg: GRFConfig, N, rng):
    """Gaussian random vorticity whose power follows [1 + (tau k)^2]^(-alpha).

    White noise is shaped in Fourier space by the target spectrum's square
    root; the k=0 mode is zeroed so the field has no mean, and the transform
    of real noise keeps Hermitian symmetry exactly.
    """
    ops = SpectralOps(N)
    k_int = np.sqrt(ops.mx**2 + ops.my**2)
    shape = (1.0 + (cfg.tau_corr * k_int) ** 2) ** (-cfg.alpha / 2.0)
    shape[0, 0] = 0.0
    noise_hat = np.fft.fft2(rng.standard_normal((N, N)))
    omega = np.real(np.fft.ifft2(noise_hat * shape))
    rms = np.sqrt(np.mean(omega**2))
    return (cfg.amplitude / rms) * omega


def simulate_trajectory(cfg: SolverConfig, grf: GRFConfig, rng,
                        record_hook=None):
    """Burn in from a random field, then record snapshots at a fixed stride."""
    ops = SpectralOps(cfg.N)
    f_hat = ops.dealias * np.fft.fft2(forcing_source(cfg, cfg.N))
    omega = init_grf_vorticity(grf, cfg.N, rng)
    omega_hat = ops.dealias * np.fft.fft2(omega)
    limit = 1e3 * max(np.max(np.abs(omega)), 1.0)

    snaps = np.empty((cfg.snapshots_per_traj, cfg.N, cfg.N), np.float32)
    total = cfg.burn_in_steps + cfg.record_stride * cfg.snapshots_per_traj
    rec = 0
    for step in range(1, total + 1):
        omega_hat = kolmogorov_step(omega_hat, ops, cfg, f_hat)
        if step >= cfg.burn_in_steps and (step - cfg.burn_in_steps) % cfg.record_stride == 0 \
                and rec < cfg.snapshots_per_traj:
            field = np.real(np.fft.ifft2(omega_hat))
            if np.max(np.abs(field)) > limit or not np.isfinite(field).all():
                raise BlowUpError(f"solver blow-up at step {step}")
            snaps[rec] = field.astype(np.float32)
            rec += 1
            if record_hook is not None:
                record_hook(rec, field)
    return snaps


def enstrophy(omega):
    return float(np.sum(np.asarray(omega) ** 2))


# ---------------------------------------------------------------------------
# degrade / upsample operators

def subsample_stride(x_hr, s):
    """Top-left anchored stride-s subsampling over the spatial axes."""
    x = np.asarray(x_hr)
    spatial = x.shape[-3:-1] if x.ndim >= 3 else x.shape
    if spatial[0] % s or spatial[1] % s:
        raise ShapeError(f"subsample_stride: {spatial} not divisible by {s}")
    if x.ndim == 2:
        return x[::s, ::s]
    return x[..., ::s, ::s, :]


def upsample_nearest(x_lr, s):
    """Replicate each pixel into an s x s block."""
    x = np.asarray(x_lr)
    if s < 1:
        raise ValueError("upsample factor must be >= 1")
    if x.ndim == 2:
        return np.repeat(np.repeat(x, s, axis=0), s, axis=1)
    return np.repeat(np.repeat(x, s, axis=-3), s, axis=-2)


# ---------------------------------------------------------------------------
# dataset container

_MAGIC = b"FFD1"
_VERSION = 1


class FieldDataset:
    """HR snapshots, LR-upsampled companions, stats, and the 90/10 split."""

    def __init__(self, hr, lr_up, mean, std, train_idx, val_idx, stride_s):
        self.hr = np.asarray(hr, np.float32)
        self.lr_up = np.asarray(lr_up, np.float32)
        self.mean = np.asarray(mean, np.float64)
        self.std = np.asarray(std, np.float64)
        self.train_idx = np.asarray(train_idx, np.uint32)
        self.val_idx = np.asarray(val_idx, np.uint32)
        self.stride_s = int(stride_s)

    # -- construction ------------------------------------------------------
    @staticmethod
    def from_snapshots(hr, stride_s, split_frac=0.9, seed=0):
        hr = np.asarray(hr, np.float32)
        if hr.ndim == 3:
            hr = hr[..., None]
        count = hr.shape[0]
        lr_up = upsample_nearest(subsample_stride(hr, stride_s), stride_s)
        perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(count)
        n_train = int(split_frac * count)
        train_idx, val_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        train = hr[train_idx]
        mean = train.mean(axis=(0, 1, 2), dtype=np.float64)
        std = train.std(axis=(0, 1, 2), dtype=np.float64)
        return FieldDataset(hr, lr_up, mean, std, train_idx, val_idx, stride_s)

    # -- views -------------------------------------------------------------
    @property
    def count(self):
        return self.hr.shape[0]

    def normalize(self, x):
        return ((np.asarray(x) - self.mean) / self.std).astype(np.float32)

    def denormalize(self, x):
        return (np.asarray(x, np.float64) * self.std + self.mean).astype(np.float32)

    def validate(self):
        count, H, W, C = self.hr.shape
        if self.lr_up.shape != self.hr.shape:
            raise ValueError("LR block shape mismatch")
        if len(self.train_idx) + len(self.val_idx) != count:
            raise ValueError("split does not cover the dataset")
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise ValueError("split overlaps")
        if not np.all(self.std > 0):
            raise ValueError("degenerate channel std")
        redo = upsample_nearest(subsample_stride(self.hr, self.stride_s), self.stride_s)
        if not np.array_equal(redo, self.lr_up):
            raise ValueError("LR block is not the stated degrade of HR")
        return True

    # -- binary container ----------------------------------------------------
    def save(self, path):
        count, H, W, C = self.hr.shape
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<6I", _VERSION, count, H, W, C, self.stride_s))
            f.write(self.mean.astype("<f8").tobytes())
            f.write(self.std.astype("<f8").tobytes())
            f.write(self.hr.astype("<f4").tobytes())
            f.write(self.lr_up.astype("<f4").tobytes())
            f.write(struct.pack("<I", len(self.train_idx)))
            f.write(self.train_idx.astype("<u4").tobytes())
            f.write(struct.pack("<I", len(self.val_idx)))
            f.write(self.val_idx.astype("<u4").tobytes())

    @staticmethod
    def load(path):
        with open(path, "rb") as f:
            if f.read(4) != _MAGIC:
                raise ValueError(f"{path}: not an FFD1 file")
            version, count, H, W, C, stride_s = struct.unpack("<6I", f.read(24))
            if version != _VERSION:
                raise ValueError(f"{path}: unsupported FFD1 version {version}")
            mean = np.frombuffer(f.read(8 * C), "<f8")
            std = np.frombuffer(f.read(8 * C), "<f8")
            n = count * H * W * C
            hr = np.frombuffer(f.read(4 * n), "<f4").reshape(count, H, W, C)
            lr = np.frombuffer(f.read(4 * n), "<f4").reshape(count, H, W, C)
            (ntr,) = struct.unpack("<I", f.read(4))
            train = np.frombuffer(f.read(4 * ntr), "<u4")
            (nva,) = struct.unpack("<I", f.read(4))
            val = np.frombuffer(f.read(4 * nva), "<u4")
        return FieldDataset(hr, lr, mean, std, train, val, stride_s)


def save_fields(path, fields):
    """Single-block FFD1 variant (stride field 0): prediction dumps."""
    x = np.asarray(fields, np.float32)
    if x.ndim == 3:
        x = x[..., None]
    count, H, W, C = x.shape
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<6I", _VERSION, count, H, W, C, 0))
        f.write(x.astype("<f4").tobytes())


def load_fields(path):
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an FFD1 file")
        version, count, H, W, C, stride_s = struct.unpack("<6I", f.read(24))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported FFD1 version {version}")
        if stride_s != 0:
            raise ValueError(f"{path}: not a single-block file")
        n = count * H * W * C
        return np.frombuffer(f.read(4 * n), "<f4").reshape(count, H, W, C).copy()


def generate_dataset(cfg: SolverConfig, n_traj, stride_s=4, split_seed=0,
                     grf: GRFConfig | None = None, progress=None):
    """Run independent trajectories and pack the snapshots."""
    grf = grf or GRFConfig()
    all_snaps = []
    for j in range(n_traj):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(j,)))
        try:
            snaps = simulate_trajectory(cfg, grf, rng)
        except BlowUpError as e:
            raise BlowUpError(f"trajectory {j}: {e}") from e
        all_snaps.append(snaps)
        if progress is not None:
            progress(j + 1, n_traj)
    hr = np.concatenate(all_snaps, axis=0)
    return FieldDataset.from_snapshots(hr, stride_s, seed=split_seed)
