"""Fourier boundary parameterisation and push-forward coefficient machinery.

The unknown top boundary sits at height H*f(x1) with f a truncated Fourier
series.  The diffeomorphism (x1, x2) -> (x1, x2/f(x1)) maps the deformed
domain onto the reference slab; solving there requires the anisotropic
conductivity tensor and the transformed boundary-admittance factor, both of
which (and their coefficient derivatives) are provided here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidShapeError(Exception):
    """The height profile f is not strictly positive on [0, L]."""


def fourier_basis(p: int, L: float, x):
    """Values and x-derivatives of the 2p+1 Fourier basis functions at x.

    Ordering: [1, sin(2*pi*x/L), cos(2*pi*x/L), sin(4*pi*x/L), cos(4*pi*x/L), ...],
    i.e. index 2n-1 is the frequency-n sine and index 2n the frequency-n cosine.
    Returns (vals, dvals), each with shape x.shape + (2p+1,).
    """
    x = np.asarray(x, dtype=float)
    vals = np.empty(x.shape + (2 * p + 1,))
    dvals = np.empty_like(vals)
    vals[..., 0] = 1.0
    dvals[..., 0] = 0.0
    if p > 0:
        w = 2.0 * np.pi * np.arange(1, p + 1) / L
        phase = x[..., None] * w
        sin, cos = np.sin(phase), np.cos(phase)
        vals[..., 1::2] = sin
        vals[..., 2::2] = cos
        dvals[..., 1::2] = w * cos
        dvals[..., 2::2] = -w * sin
    return vals, dvals


@dataclass(frozen=True)
class BoundaryShape:
    """Dimensionless height profile f(x1) = 1 + alpha . basis(x1)."""

    alpha: np.ndarray
    L: float = 1.0
    H: float = 0.05
    p: int = field(init=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size % 2 != 1:
            raise ValueError("alpha must be a vector of odd length 2p+1")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "p", (alpha.size - 1) // 2)

    def eval(self, x1):
        """Return (f, df/dx1) at x1 (scalar or array)."""
        vals, dvals = fourier_basis(self.p, self.L, x1)
        return 1.0 + vals @ self.alpha, dvals @ self.alpha

    def min_f(self, n_samples: int | None = None) -> float:
        n = n_samples or 16 * (self.p + 1)
        f, _ = self.eval(np.linspace(0.0, self.L, n, endpoint=False))
        return float(np.min(f))

    def validate(self):
        if not np.all(np.isfinite(self.alpha)):
            raise InvalidShapeError("non-finite Fourier coefficients")
        if self.min_f() <= 0.0:
            raise InvalidShapeError("height profile f is not positive on [0, L]")


@dataclass(frozen=True)
class SampledProfile:
    """Piecewise-linear height profile given by samples on a grid.

    Used for analytic truth shapes that are not in the Fourier span; the
    derivative is the piecewise-constant slope of the interpolant.
    """

    x: np.ndarray
    values: np.ndarray

    def eval(self, x1):
        x1 = np.asarray(x1, dtype=float)
        f = np.interp(x1, self.x, self.values)
        slopes = np.diff(self.values) / np.diff(self.x)
        idx = np.clip(np.searchsorted(self.x, x1, side="right") - 1, 0, len(slopes) - 1)
        return f, slopes[idx]


def eval_f(shape, x1):
    """(f, df/dx1) at x1 for any profile with an eval method."""
    return shape.eval(x1)


def pushforward_entries_from(f, df, x2):
    """Push-forward tensor entries from precomputed profile values."""
    if np.any(f <= 0.0):
        raise InvalidShapeError("height profile f is not positive at evaluation points")
    return f, -x2 * df, 1.0 / f + x2 ** 2 * df ** 2 / f


def pushforward_entries(shape, x1, x2):
    """Entries (s11, s12, s22) of the push-forward conductivity at reference
    points (x1, x2); the physical height coordinate is x2 * f(x1)."""
    f, df = shape.eval(x1)
    return pushforward_entries_from(f, df, x2)


def pushforward_tensor(shape, xtilde) -> np.ndarray:
    """Symmetric 2x2 push-forward conductivity at a reference point."""
    x1, x2 = xtilde
    s11, s12, s22 = pushforward_entries(shape, x1, x2)
    return np.array([[s11, s12], [s12, s22]])


def admittance_factor(shape, s):
    """Arc-length factor sqrt(1 + (df/ds)^2 H^2) multiplying exp(beta)."""
    _, df = shape.eval(s)
    return np.sqrt(1.0 + df ** 2 * shape.H ** 2)


def pushforward_alpha_entries_from(f, df, basis, dbasis, x2):
    """Alpha-derivatives of the tensor entries from precomputed profile and
    basis values (basis/dbasis carry a trailing coefficient axis)."""
    f = f[..., None]
    df = df[..., None]
    x2 = np.asarray(x2, dtype=float)[..., None]
    d11 = basis
    d12 = -x2 * dbasis
    d22 = -basis / f ** 2 + x2 ** 2 * (2.0 * df * dbasis / f - df ** 2 * basis / f ** 2)
    return d11, d12, d22


def pushforward_alpha_entries(shape: BoundaryShape, x1, x2):
    """Derivatives of the push-forward tensor entries w.r.t. every Fourier
    coefficient, at fixed reference coordinates.

    Returns (d11, d12, d22), each with shape x1.shape + (2p+1,).
    """
    x1 = np.asarray(x1, dtype=float)
    f, df = shape.eval(x1)
    c, dc = fourier_basis(shape.p, shape.L, x1)
    return pushforward_alpha_entries_from(f, df, c, dc, x2)


def tensor_alpha_derivative(shape: BoundaryShape, xtilde, i: int) -> np.ndarray:
    """d/d(alpha_i) of pushforward_tensor at a fixed reference point."""
    if not 0 <= i <= 2 * shape.p:
        raise ValueError(f"coefficient index {i} out of range for p={shape.p}")
    x1, x2 = xtilde
    d11, d12, d22 = pushforward_alpha_entries(shape, np.asarray(x1), np.asarray(x2))
    return np.array([[d11[..., i], d12[..., i]], [d12[..., i], d22[..., i]]])


def admittance_alpha_entries_from(df, dbasis, H):
    """Alpha-derivatives of the admittance factor from precomputed slopes."""
    fac = np.sqrt(1.0 + df ** 2 * H ** 2)
    return H ** 2 * df[..., None] * dbasis / fac[..., None]


def admittance_alpha_entries(shape: BoundaryShape, s):
    """Derivatives of the admittance factor w.r.t. every Fourier coefficient.

    Shape: s.shape + (2p+1,).
    """
    s = np.asarray(s, dtype=float)
    _, df = shape.eval(s)
    _, dc = fourier_basis(shape.p, shape.L, s)
    return admittance_alpha_entries_from(df, dc, shape.H)


def admittance_alpha_derivative(shape: BoundaryShape, s, i: int):
    """d/d(alpha_i) of admittance_factor at arc-coordinate s."""
    if not 0 <= i <= 2 * shape.p:
        raise ValueError(f"coefficient index {i} out of range for p={shape.p}")
    return admittance_alpha_entries(shape, s)[..., i]
