"""Scalar wavefields and free-space propagation by the angular spectrum method.

All lengths are expressed in units of the illumination wavelength (lambda = 1).
Fields live on a square grid of `grid_n` x `grid_n` pixels with spacing `pitch`.
Propagation zero-pads to twice the grid size to suppress periodic wraparound and
zeroes the evanescent band (spatial frequencies with fx^2 + fy^2 > 1).
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.fft as _fft

from .errors import InvalidGeometryError, InvalidLayerError


def _as_readonly(a, dtype):
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Wavefield:
    """Complex scalar field E(x, y) sampled on a uniform square grid."""

    grid_n: int
    pitch: float
    values: np.ndarray

    def __post_init__(self):
        if self.grid_n < 2:
            raise InvalidGeometryError(f"grid_n must be >= 2, got {self.grid_n}")
        if not (self.pitch > 0):
            raise InvalidGeometryError(f"pitch must be positive, got {self.pitch}")
        vals = _as_readonly(self.values, np.complex128)
        if vals.shape != (self.grid_n, self.grid_n):
            raise InvalidGeometryError(
                f"values shape {vals.shape} does not match grid_n={self.grid_n}"
            )
        if not np.all(np.isfinite(vals.view(np.float64))):
            raise InvalidGeometryError("field contains non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class PropagationPlan:
    """Precomputed angular-spectrum transfer function for one (grid, distance)."""

    grid_n: int
    pitch: float
    distance: float
    padded_n: int
    transfer: np.ndarray


class NonlinearKind(Enum):
    LINEAR = "linear"
    KERR = "kerr"
    SATURABLE_ABSORBER = "saturable_absorber"


@dataclass(frozen=True)
class NonlinearSpec:
    """Optional intensity-dependent response applied after each layer.

    Kerr: per-pixel phase shift kerr_gamma * |E|^2 (lumped thin-element model).
    Saturable absorber: power transmission T(I) = t_min + (t_max - t_min) * I / (I + i_sat).
    """

    kind: NonlinearKind = NonlinearKind.LINEAR
    kerr_gamma: float = 0.0
    sa_t_min: float = 0.1
    sa_t_max: float = 0.9
    sa_i_sat: float = 1.0

    def __post_init__(self):
        if self.kind is NonlinearKind.KERR and self.kerr_gamma < 0:
            raise InvalidLayerError("kerr_gamma must be >= 0")
        if self.kind is NonlinearKind.SATURABLE_ABSORBER:
            if not (0.0 <= self.sa_t_min <= self.sa_t_max <= 1.0):
                raise InvalidLayerError(
                    "need 0 <= sa_t_min <= sa_t_max <= 1, got "
                    f"({self.sa_t_min}, {self.sa_t_max})"
                )
            if not (self.sa_i_sat > 0):
                raise InvalidLayerError("sa_i_sat must be positive")


LINEAR = NonlinearSpec()


def make_plan(grid_n, pitch, distance):
    """Build the transfer function H on the 2x zero-padded frequency grid.

    H(fx, fy) = exp(i 2 pi d sqrt(1 - fx^2 - fy^2)) on the propagating band;
    evanescent entries (fx^2 + fy^2 > 1) are exactly zero for d > 0. At d = 0
    the plan is the exact identity (all ones), so propagate(f, 0) == f.
    """
    if grid_n < 2:
        raise InvalidGeometryError(f"grid_n must be >= 2, got {grid_n}")
    if not (pitch > 0):
        raise InvalidGeometryError(f"pitch must be positive, got {pitch}")
    if distance < 0:
        raise InvalidGeometryError(f"distance must be >= 0, got {distance}")
    padded_n = 2 * grid_n
    f = np.fft.fftfreq(padded_n, d=pitch)
    f2 = f[:, None] ** 2 + f[None, :] ** 2
    if distance == 0:
        transfer = np.ones((padded_n, padded_n), dtype=np.complex128)
    else:
        kz = np.sqrt(np.maximum(1.0 - f2, 0.0))
        transfer = np.where(
            f2 <= 1.0,
            np.exp(2j * np.pi * distance * kz),
            0.0 + 0.0j,
        )
    transfer.setflags(write=False)
    return PropagationPlan(grid_n, pitch, distance, padded_n, transfer)


def _pad_slices(grid_n):
    lo = grid_n // 2
    return slice(lo, lo + grid_n)


def propagate_values(values, plan, conjugate=False):
    """Propagate raw field arrays of shape (..., n, n) through a plan.

    With conjugate=True applies the Hermitian adjoint of the propagation
    operator (conjugated transfer function), used by the reverse pass.
    """
    if plan.distance == 0:
        # identity plan: skip the FFT round trip so the result is bit-exact
        return np.array(values, dtype=np.complex128)
    n = plan.grid_n
    pad = np.zeros(values.shape[:-2] + (plan.padded_n, plan.padded_n), dtype=np.complex128)
    s = _pad_slices(n)
    pad[..., s, s] = values
    spec = _fft.fft2(pad, axes=(-2, -1))
    spec *= np.conj(plan.transfer) if conjugate else plan.transfer
    out = _fft.ifft2(spec, axes=(-2, -1))
    return np.ascontiguousarray(out[..., s, s])


def propagate(fld, plan):
    """Free-space propagation of a Wavefield over plan.distance."""
    if fld.grid_n != plan.grid_n or fld.pitch != plan.pitch:
        raise InvalidGeometryError(
            f"field geometry ({fld.grid_n}, {fld.pitch}) does not match plan "
            f"({plan.grid_n}, {plan.pitch})"
        )
    return Wavefield(fld.grid_n, fld.pitch, propagate_values(fld.values, plan))


def modulate(fld, amplitude, phase):
    """Per-pixel complex modulation: out = E * amplitude * exp(i phase)."""
    amplitude = np.asarray(amplitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if amplitude.shape != fld.values.shape or phase.shape != fld.values.shape:
        raise InvalidGeometryError(
            f"mask shapes {amplitude.shape}/{phase.shape} do not match field "
            f"{fld.values.shape}"
        )
    if amplitude.min() < 0.0 or amplitude.max() > 1.0:
        raise InvalidLayerError("amplitude mask must lie in [0, 1]")
    return Wavefield(fld.grid_n, fld.pitch, fld.values * amplitude * np.exp(1j * phase))


def apply_nonlinearity_values(values, spec):
    """Apply a NonlinearSpec to raw field arrays (elementwise, any shape)."""
    if spec.kind is NonlinearKind.LINEAR:
        return values
    intensity = np.abs(values) ** 2
    if spec.kind is NonlinearKind.KERR:
        if spec.kerr_gamma == 0.0:
            return values
        return values * np.exp(1j * spec.kerr_gamma * intensity)
    transmission = spec.sa_t_min + (spec.sa_t_max - spec.sa_t_min) * intensity / (
        intensity + spec.sa_i_sat
    )
    return values * np.sqrt(transmission)


def apply_nonlinearity(fld, spec):
    out = apply_nonlinearity_values(fld.values, spec)
    if out is fld.values:
        return fld
    return Wavefield(fld.grid_n, fld.pitch, out)


def total_power(fld):
    """Total optical power: sum of per-pixel intensities |E|^2."""
    values = fld.values if isinstance(fld, Wavefield) else np.asarray(fld)
    return float(np.sum(np.abs(values) ** 2))
