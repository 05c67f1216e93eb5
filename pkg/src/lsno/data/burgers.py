"""Viscous Burgers equation on the periodic unit interval.

``u_t + u u_x = nu u_xx`` is advanced pseudo-spectrally with the
integrating-factor RK4 scheme: the viscous term is integrated exactly in
Fourier space and the advective flux ``(u^2 / 2)_x`` is evaluated on the
grid with 2/3-rule dealiasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, StabilityError


@dataclass(frozen=True)
class BurgersSpec:
    s: int = 64
    nt: int = 50
    nu: float = 0.1
    tau: float = 5.0
    decay: float = 2.0
    amplitude: float = 625.0
    cutoff: int = 16
    cfl: float = 0.5

    def __post_init__(self):
        if self.s < 4 or self.s & (self.s - 1):
            raise ParameterError(f"s must be a power of two, got {self.s}")
        if self.nt < 2:
            raise ParameterError("nt must be >= 2")
        if not self.nu > 0:
            raise ParameterError("viscosity must be positive")
        if self.cutoff < 1:
            raise ParameterError("cutoff mode must be >= 1")
        if not 0 < self.cfl <= 1:
            raise ParameterError("cfl must lie in (0, 1]")

    def params(self) -> tuple[float, ...]:
        return (self.nu, self.tau, self.decay, self.amplitude, float(self.cutoff), self.cfl)

    def with_resolution(self, s: int, nt: int | None = None) -> "BurgersSpec":
        return BurgersSpec(s, self.nt if nt is None else nt, self.nu, self.tau, self.decay,
                           self.amplitude, self.cutoff, self.cfl)


def _dealias_mask(s: int) -> np.ndarray:
    m = np.arange(s // 2 + 1)
    return m < s / 3


def grf_coefficients(rng: np.random.Generator, spec: BurgersSpec) -> np.ndarray:
    """Complex Fourier coefficients c_0..c_cutoff of a Gaussian random field.

    ``E|c_m|^2 = amplitude * ((2 pi m)^2 + tau^2)^(-decay)``; ``c_0`` is real.
    The draws do not depend on the grid, so one field can be sampled at any
    resolution.
    """
    m = np.arange(spec.cutoff + 1)
    var = spec.amplitude * ((2 * np.pi * m) ** 2 + spec.tau**2) ** (-spec.decay)
    c0 = rng.standard_normal() * math.sqrt(var[0])
    re = rng.standard_normal(spec.cutoff)
    im = rng.standard_normal(spec.cutoff)
    coeffs = np.empty(spec.cutoff + 1, dtype=np.complex128)
    coeffs[0] = c0
    coeffs[1:] = (re + 1j * im) * np.sqrt(var[1:] / 2)
    return coeffs


def field_from_coefficients(coeffs: np.ndarray, s: int, return_imag: bool = False):
    """Evaluate ``sum_m c_m e^{2 pi i m x}`` (with conjugate modes) on ``s`` nodes."""
    cutoff = len(coeffs) - 1
    if cutoff >= s // 2:
        raise ParameterError(f"cutoff mode {cutoff} not representable on {s} nodes")
    spectrum = np.zeros(s, dtype=np.complex128)
    spectrum[: cutoff + 1] = coeffs
    spectrum[s - cutoff :] = np.conj(coeffs[1:][::-1])
    field = np.fft.ifft(spectrum) * s
    if return_imag:
        return field.real.copy(), float(np.max(np.abs(field.imag)))
    return field.real.copy()


def solve_burgers(u0, spec: BurgersSpec = BurgersSpec()) -> np.ndarray:
    """Trajectory ``u(x_j, t_k)`` of shape ``(s, nt)`` at ``nt`` uniform times in [0, 1]."""
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (spec.s,):
        raise ParameterError(f"u0 must have length s={spec.s}, got shape {u0.shape}")
    s = spec.s
    k = 2 * np.pi * np.arange(s // 2 + 1)
    mask = _dealias_mask(s)
    lin = -spec.nu * k**2

    umax = float(np.max(np.abs(u0)))
    interval = 1.0 / (spec.nt - 1)
    dt_max = spec.cfl * (1.0 / s) / umax if umax > 0 else interval
    substeps = max(1, math.ceil(interval / dt_max))
    dt = interval / substeps
    e_full = np.exp(lin * dt)
    e_half = np.exp(lin * dt / 2)
    g = -0.5j * dt * k * mask

    def flux(v):
        u = np.fft.irfft(v, n=s)
        return g * np.fft.rfft(u * u)

    v = np.fft.rfft(u0) * mask
    out = np.empty((s, spec.nt))
    out[:, 0] = np.fft.irfft(v, n=s)
    for j in range(1, spec.nt):
        for _ in range(substeps):
            a = flux(v)
            b = flux(e_half * (v + a / 2))
            c = flux(e_half * v + b / 2)
            d = flux(e_full * v + e_half * c)
            v = e_full * v + (e_full * a + 2 * e_half * (b + c) + d) / 6
        snap = np.fft.irfft(v, n=s)
        if not np.all(np.isfinite(snap)):
            raise StabilityError(
                f"non-finite values at t={j * interval:.3f}; lower the cfl number (now {spec.cfl})"
            )
        out[:, j] = snap
    return out
