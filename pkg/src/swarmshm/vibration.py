"""Ambient vibration synthesis by mode superposition.

Each retained mode is an independent single-degree-of-freedom oscillator
driven by zero-mean Gaussian white noise, integrated with the exact
discrete-time recursion for a zero-order-hold input. Point samples at
arbitrary plate positions reconstruct the physical acceleration through
bilinear interpolation of the mode shapes, plus band-limited sensor
noise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.signal as ssig

from .plate import ModalBasis

G_ACCEL = 9.80665  # m/s^2 per g

DEFAULT_DAMPING = 0.01


@dataclass(frozen=True)
class SensorModel:
    """Accelerometer noise model: white noise of given density."""

    noise_density: float = 60e-6  # g / sqrt(Hz)
    sample_rate: float = 400.0    # Hz

    def __post_init__(self):
        if self.noise_density < 0:
            raise ValueError("noise density must be >= 0")

    @property
    def noise_std(self):
        """Per-sample noise standard deviation in m/s^2."""
        return self.noise_density * G_ACCEL * np.sqrt(self.sample_rate / 2.0)


@dataclass
class VibrationField:
    """Modal acceleration time series shared by every sampling robot."""

    basis: ModalBasis
    modal_accelerations: np.ndarray  # (M, n_samples), m/s^2
    sample_rate: float
    duration: float

    def __post_init__(self):
        n_expected = int(round(self.sample_rate * self.duration))
        if self.modal_accelerations.shape != (self.basis.n_modes, n_expected):
            raise ValueError("modal acceleration shape does not match rate * duration")
        if not np.all(np.isfinite(self.modal_accelerations)):
            raise ValueError("modal accelerations must be finite")

    @property
    def n_samples(self):
        return self.modal_accelerations.shape[1]

    def window_start_index(self, start_s: float) -> int:
        return int(round(start_s * self.sample_rate))

    def content_hash(self) -> str:
        hsh = hashlib.sha256()
        hsh.update(np.ascontiguousarray(self.modal_accelerations).tobytes())
        return hsh.hexdigest()[:16]


def _sdof_accel_response(f_hz, zeta, excitation, rate):
    """Exact ZOH response q'' of q'' + 2 zeta w q' + w^2 q = u(t)."""
    w = 2.0 * np.pi * f_hz
    dt = 1.0 / rate
    # discretize the state [q, q'] with the augmented-matrix exponential
    aug = np.zeros((3, 3))
    aug[:2, :2] = [[0.0, 1.0], [-w**2, -2.0 * zeta * w]]
    aug[:2, 2] = [0.0, 1.0]
    phi = sla.expm(aug * dt)
    A, B = phi[:2, :2], phi[:2, 2:3]
    # output q'' = u - 2 zeta w q' - w^2 q
    C = np.array([[-w**2, -2.0 * zeta * w]])
    num, den = ssig.ss2tf(A, B, C, [[1.0]])
    return ssig.lfilter(num[0], den, excitation)


def simulate_field(basis: ModalBasis, damping=DEFAULT_DAMPING, duration: float = 30.0,
                   rate: float = 400.0, seed: int = 0, rms_accel: float = 1.0) -> VibrationField:
    """Drive each mode with white noise and return the modal accelerations.

    After integration the per-mode series are rescaled so their
    mean-square values are proportional to the basis weights and the
    plate-average RMS acceleration equals ``rms_accel``. The rate must
    respect the Nyquist criterion with margin (>= 2.2x the highest
    retained frequency).
    """
    zetas = np.broadcast_to(np.asarray(damping, dtype=float), (basis.n_modes,))
    if np.any(zetas <= 0) or np.any(zetas >= 0.2):
        raise ValueError("damping ratios must lie in (0, 0.2)")
    if rate < 2.2 * float(np.max(basis.frequencies)):
        raise ValueError(f"sample rate {rate} too low for f_max="
                         f"{float(np.max(basis.frequencies)):.1f} Hz")
    if duration <= 0:
        raise ValueError("duration must be positive")
    if rms_accel < 0:
        raise ValueError("rms_accel must be >= 0")

    n = int(round(rate * duration))
    rng = np.random.default_rng(seed)
    q = np.empty((basis.n_modes, n))
    node_count = basis.grid_n**2
    for i in range(basis.n_modes):
        u = rng.standard_normal(n)
        resp = _sdof_accel_response(basis.frequencies[i], zetas[i], u, rate)
        # mean-square target: weights ratio, plate-average RMS = rms_accel
        target_ms = basis.weights[i] * node_count * rms_accel**2
        ms = np.mean(resp**2)
        q[i] = resp * np.sqrt(target_ms / ms) if target_ms > 0 else 0.0 * resp
    return VibrationField(basis=basis, modal_accelerations=q,
                          sample_rate=rate, duration=duration)


def sample_at(field: VibrationField, x, window, sensor: SensorModel,
              seed: int = 0) -> np.ndarray:
    """Acceleration series at position ``x`` over ``window`` = (start, length) s.

    a(t) = sum_i phi_i(x) q_i''(t) with bilinear mode interpolation, plus
    white Gaussian sensor noise.
    """
    x = np.asarray(x, dtype=float)
    side = field.basis.side_length
    if np.any(x < -1e-12) or np.any(x > side + 1e-12):
        raise ValueError(f"position {x} outside the plate")
    if abs(sensor.sample_rate - field.sample_rate) > 1e-9:
        raise ValueError("sensor rate must match the field rate")
    start_s, length_s = window
    i0 = field.window_start_index(start_s)
    count = int(round(length_s * field.sample_rate))
    if start_s < -1e-12 or i0 + count > field.n_samples:
        raise ValueError("window outside the simulated duration")

    phi = field.basis.interpolate(x[None, :]).ravel()
    a = phi @ field.modal_accelerations[:, i0:i0 + count]
    std = sensor.noise_std
    if std > 0:
        a = a + std * np.random.default_rng(seed).standard_normal(count)
    return a


def field_cache_path(cache_dir, seed: int, basis: ModalBasis) -> Path:
    return Path(cache_dir) / f"field_{seed}_{basis.content_hash()}.npz"


def save_field(field: VibrationField, cache_dir, seed: int) -> Path:
    """Persist the modal series keyed by (seed, basis hash)."""
    path = field_cache_path(cache_dir, seed, field.basis)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, modal=field.modal_accelerations,
                        rate=field.sample_rate, duration=field.duration,
                        basis_hash=field.basis.content_hash())
    return path


def load_field(cache_dir, seed: int, basis: ModalBasis):
    """Load a cached field for this (seed, basis), or None if absent."""
    path = field_cache_path(cache_dir, seed, basis)
    if not path.exists():
        return None
    data = np.load(path, allow_pickle=False)
    if str(data["basis_hash"]) != basis.content_hash():
        return None
    return VibrationField(basis=basis, modal_accelerations=data["modal"],
                          sample_rate=float(data["rate"]),
                          duration=float(data["duration"]))
