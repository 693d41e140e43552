"""Dense matrix and vector primitives shared by the whole toolkit.

Spectral norms come from power iteration on the Gram matrix with a
deterministic seeded start, so repeated runs produce identical numbers.
The symmetric inverse accepts Tikhonov damping for rank-deficient
curvature blocks.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "PowerIterationError",
    "SingularMatrixError",
    "as_matrix",
    "as_vector",
    "spectral_norm",
    "frobenius_norm",
    "gram",
    "auto_damping",
    "damped_inverse",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000

# fixed start seed; callers may override to retry pathological cases
_START_SEED = 0x5EED

# rcond below this is treated as singular (cond ~ 1e13 at float64)
_RCOND_FLOOR = 1e-13


class PowerIterationError(RuntimeError):
    """Power iteration ran out of iterations before converging.

    Carries the last singular-value estimate and iterate so the caller can
    inspect the stall or retry with a different start ``seed``.
    """

    def __init__(self, message: str, last_estimate: float, last_vector: np.ndarray):
        super().__init__(message)
        self.last_estimate = float(last_estimate)
        self.last_vector = last_vector


class SingularMatrixError(ValueError):
    """Inversion hit an exactly or numerically singular matrix."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a nonempty, finite, float64 2-D array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce to a nonempty, finite, float64 1-D array."""
    v = np.asarray(a, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D array, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} contains non-finite entries")
    return v


def spectral_norm(
    m,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = _START_SEED,
) -> float:
    """Largest singular value, estimated by power iteration.

    Iterates ``x <- Bx / ||Bx||`` with ``B`` the smaller of ``A^T A`` and
    ``A A^T`` and reads the singular value off the Rayleigh quotient.
    Convergence is declared once the estimate moves by at most ``tol``
    (relative, floored at 1) on two consecutive iterations.  The criterion
    watches the norm estimate rather than the iterate, so matrices with
    repeated top singular values still converge.

    Returns 0.0 for the all-zero matrix.  Raises ``PowerIterationError``
    when ``max_iter`` is exhausted; the error carries the last estimate so
    callers can retry with another ``seed``.
    """
    a = as_matrix(m)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not a.any():
        return 0.0
    # normalize so the Gram matrix can neither underflow nor overflow
    scale = float(np.abs(a).max())
    a = a / scale
    b = a.T @ a if a.shape[1] <= a.shape[0] else a @ a.T
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(b.shape[0])
    x /= np.linalg.norm(x)
    sigma = 0.0
    steady = 0
    for _ in range(max_iter):
        y = b @ x
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            # start vector landed in the null space; draw a fresh one
            x = rng.standard_normal(b.shape[0])
            x /= np.linalg.norm(x)
            sigma, steady = 0.0, 0
            continue
        est = math.sqrt(max(float(x @ y), 0.0))
        if abs(est - sigma) <= tol * max(est, 1.0):
            steady += 1
            if steady >= 2:
                return est * scale
        else:
            steady = 0
        sigma = est
        x = y / ny
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(last estimate {sigma * scale:.17g}); retry with a different seed",
        last_estimate=sigma * scale,
        last_vector=x,
    )


def frobenius_norm(m) -> float:
    """Square root of the sum of squared entries."""
    a = as_matrix(m)
    return float(np.sqrt((a * a).sum()))


def gram(x) -> np.ndarray:
    """Curvature block of the layerwise quadratic output loss: 2 X X^T.

    The squared-output deviation of one layer on a calibration batch
    decomposes row by row with this identical d x d block, so a single
    block stands in for the whole layer's Hessian.
    """
    xm = as_matrix(x, "calibration matrix")
    g = xm @ xm.T
    # g + g^T doubles and symmetrizes in one step
    return g + g.T


def auto_damping(h) -> float:
    """Relative Tikhonov floor 1e-8 * trace(h)/dim (0 for a zero matrix)."""
    hm = as_matrix(h, "hessian")
    if hm.shape[0] != hm.shape[1]:
        raise ValueError(f"hessian must be square, got shape {hm.shape}")
    return 1e-8 * float(np.trace(hm)) / hm.shape[0]


def damped_inverse(h, lam: float = 0.0) -> np.ndarray:
    """Inverse of ``h + lam*I`` for symmetric ``h``, symmetrized on output.

    ``lam = 0`` on a rank-deficient matrix raises ``SingularMatrixError``;
    retry with ``lam > 0`` (``auto_damping`` gives a sensible default).
    """
    hm = as_matrix(h, "hessian")
    n = hm.shape[0]
    if hm.shape[1] != n:
        raise ValueError(f"hessian must be square, got shape {hm.shape}")
    scale = float(np.abs(hm).max())
    if float(np.abs(hm - hm.T).max()) > 1e-10 * max(scale, 1.0):
        raise ValueError("hessian must be symmetric")
    if lam < 0:
        raise ValueError("damping must be nonnegative")
    a = hm + lam * np.eye(n)
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "matrix is singular; supply damping > 0"
        ) from exc
    # LU can sail through a numerically singular matrix; screen by rcond
    norm_a = float(np.abs(a).sum(axis=1).max())
    norm_inv = float(np.abs(inv).sum(axis=1).max())
    if not np.isfinite(inv).all() or 1.0 / (norm_a * norm_inv) < _RCOND_FLOOR:
        raise SingularMatrixError(
            "matrix is numerically singular; supply damping > 0"
        )
    return (inv + inv.T) / 2.0
