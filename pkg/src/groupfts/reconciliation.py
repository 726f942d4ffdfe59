"""Coherent reconciliation of base forecasts on a grouped structure.

All methods act on natural-scale rates, one age group at a time.  Forecasts
are arrays of shape ``(n_series,)`` or ``(n_series, n_ages)`` with rows in the
summing matrix's order.  The summing matrix may be a :class:`SummingMatrix`
(one slice per age), a 3-D array ``(n_ages, n_series, n_bottom)`` or a single
2-D slice shared by all ages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, qr, solve_triangular

from .data_model import SummingMatrix

logger = logging.getLogger(__name__)

METHODS = ("BU", "OP", "MinT", "Comb_av")


class ReconciliationError(ValueError):
    pass


def _slices(S, n_ages: int) -> list[np.ndarray]:
    if isinstance(S, SummingMatrix):
        S = S.entries
    S = np.asarray(S, dtype=float)
    if S.ndim == 2:
        return [S] * n_ages
    if S.ndim != 3:
        raise ReconciliationError("summing matrix must be 2-D or 3-D")
    if S.shape[0] != n_ages:
        raise ReconciliationError(f"summing matrix has {S.shape[0]} age slices, forecasts have {n_ages} ages")
    return list(S)


def _columns(x, n_rows: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x[:, None] if single else x
    if x.ndim != 2 or x.shape[0] != n_rows:
        raise ReconciliationError(f"{what} has {x.shape[0]} rows, summing matrix expects {n_rows}")
    return x, single


def _shape_of(S) -> tuple[int, int]:
    if isinstance(S, SummingMatrix):
        return S.entries.shape[1:]
    S = np.asarray(S)
    return S.shape[-2:]


def _projection_solve(S: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of ``y`` on the columns of ``S`` through a QR factorisation."""
    Q, R = qr(S, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise ReconciliationError("summing matrix is rank deficient")
    return solve_triangular(R, Q.T @ y)


# ---------------------------------------------------------------------------
# methods


def reconcile_bu(base_bottom, S) -> np.ndarray:
    """Aggregate bottom-level forecasts: ``S @ b`` for every age."""
    m, nb = _shape_of(S)
    b, single = _columns(base_bottom, nb, "bottom forecast")
    out = np.column_stack([Sa @ b[:, a] for a, Sa in enumerate(_slices(S, b.shape[1]))])
    return out[:, 0] if single else out


def reconcile_ols(base_all, S) -> np.ndarray:
    """Orthogonal projection of all base forecasts onto the coherent subspace."""
    m, nb = _shape_of(S)
    y, single = _columns(base_all, m, "base forecast")
    slices = _slices(S, y.shape[1])
    if not isinstance(S, SummingMatrix) and np.asarray(S).ndim == 2:
        out = slices[0] @ _projection_solve(slices[0], y)
    else:
        out = np.column_stack([Sa @ _projection_solve(Sa, y[:, a]) for a, Sa in enumerate(slices)])
    return out[:, 0] if single else out


@dataclass(frozen=True)
class ErrorCovariance:
    """Shrunk covariance of base forecast errors and its shrinkage intensity."""

    matrix: np.ndarray
    intensity: float

    def __post_init__(self):
        W = self.matrix
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ReconciliationError("W must be square")
        if np.max(np.abs(W - W.T)) > 1e-12 * max(1.0, float(np.max(np.abs(W)))):
            raise ReconciliationError("W must be symmetric")

    @classmethod
    def identity(cls, n: int) -> "ErrorCovariance":
        return cls(np.eye(n), 0.0)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def shrink(cov: np.ndarray, intensity: float) -> np.ndarray:
    """Pull the off-diagonal entries of ``cov`` toward zero: ``lambda * diag + (1 - lambda) * cov``."""
    cov = np.asarray(cov, dtype=float)
    target = np.diag(np.diag(cov))
    return intensity * target + (1.0 - intensity) * cov


def shrinkage_intensity(errors: np.ndarray) -> float:
    """Variance-minimising intensity toward a diagonal target on the correlation scale.

    The ratio of the summed estimated variances of the off-diagonal sample
    correlations to their summed squares, clamped to ``[0, 1]``.
    """
    x = np.asarray(errors, dtype=float)
    n = x.shape[0]
    cov = x.T @ x / n
    sd = np.sqrt(np.diag(cov))
    sd = np.where(sd > 0, sd, 1.0)
    xs = x / sd
    corr = xs.T @ xs / n
    v = (xs**2).T @ (xs**2) - (xs.T @ xs) ** 2 / n
    v /= n * (n - 1)
    off = ~np.eye(x.shape[1], dtype=bool)
    denom = float(np.sum(corr[off] ** 2))
    if denom <= 0.0:
        return 1.0
    return float(np.clip(np.sum(v[off]) / denom, 0.0, 1.0))


def estimate_W(errors, intensity: float | None = None) -> ErrorCovariance:
    """Shrinkage estimate of the base forecast error covariance.

    ``errors`` is ``(n_vectors, n_series)``; forecast errors are taken as
    mean zero, so the sample covariance is the second-moment matrix
    ``e'e / n``.  When the estimated intensity leaves the matrix singular
    (for example all error vectors identical), the intensity is raised in
    steps until the Cholesky factorisation succeeds.
    """
    x = np.asarray(errors, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ReconciliationError("need at least two error vectors")
    if not np.all(np.isfinite(x)):
        raise ReconciliationError("error vectors contain non-finite values")
    n, m = x.shape
    cov = x.T @ x / n
    d = np.diag(cov).copy()
    floor = max(float(d.max()), 1e-300) * 1e-10
    if np.any(d <= floor):
        # Series with no error variance still need a positive diagonal.
        cov[np.diag_indices(m)] = np.maximum(d, floor)
    lam = shrinkage_intensity(x) if intensity is None else float(np.clip(intensity, 0.0, 1.0))
    for step in (0.0, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0):
        trial = max(lam, step)
        W = shrink(cov, trial)
        W = 0.5 * (W + W.T)
        try:
            L = cholesky(W, lower=True)
        except LinAlgError:
            continue
        if np.min(np.diag(L)) > 1e-150:
            if trial > lam:
                logger.info("shrinkage intensity raised from %.3g to %.3g for positive definiteness", lam, trial)
            return ErrorCovariance(W, trial)
    raise ReconciliationError("W is not positive definite even with full shrinkage")


def reconcile_mint(base_all, S, W: ErrorCovariance | np.ndarray) -> np.ndarray:
    """Generalised least-squares projection weighted by the inverse of ``W``."""
    m, nb = _shape_of(S)
    y, single = _columns(base_all, m, "base forecast")
    Wm = W.matrix if isinstance(W, ErrorCovariance) else np.asarray(W, dtype=float)
    if Wm.shape != (m, m):
        raise ReconciliationError(f"W is {Wm.shape}, expected {(m, m)}")
    try:
        L = cholesky(Wm, lower=True)
    except LinAlgError:
        raise ReconciliationError("W is not positive definite") from None
    yw = solve_triangular(L, y, lower=True)
    slices = _slices(S, y.shape[1])
    if not isinstance(S, SummingMatrix) and np.asarray(S).ndim == 2:
        Sw = solve_triangular(L, slices[0], lower=True)
        out = slices[0] @ _projection_solve(Sw, yw)
    else:
        cols = []
        for a, Sa in enumerate(slices):
            Sw = solve_triangular(L, Sa, lower=True)
            cols.append(Sa @ _projection_solve(Sw, yw[:, a]))
        out = np.column_stack(cols)
    return out[:, 0] if single else out


def combine_average(*forecasts) -> np.ndarray:
    """Equal-weight average of reconciled forecasts."""
    if not forecasts:
        raise ReconciliationError("nothing to combine")
    arrays = [np.asarray(f, dtype=float) for f in forecasts]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ReconciliationError("forecasts to combine differ in shape")
    out = np.zeros_like(arrays[0])
    for a in arrays:
        out += a
    return out / len(arrays)


def clamp_negative(R: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(R, dtype=float), 0.0)


def reconcile_all(base_all, S, W: ErrorCovariance | np.ndarray | None, methods=METHODS,
                  clamp: bool = False) -> dict[str, np.ndarray]:
    """Run the requested methods on one horizon's base forecasts.

    BU uses the bottom rows of ``base_all``.  ``Comb_av`` averages BU, OP and
    MinT whether or not they were requested individually.
    """
    m, nb = _shape_of(S)
    y, _ = _columns(base_all, m, "base forecast")
    if isinstance(S, SummingMatrix):
        bottom_rows = S.bottom_rows
    else:
        S2 = np.asarray(S)[0] if np.asarray(S).ndim == 3 else np.asarray(S)
        bottom_rows = _identity_rows(S2)
    need = set(methods)
    if "Comb_av" in need:
        need |= {"BU", "OP", "MinT"}
    out: dict[str, np.ndarray] = {}
    if "BU" in need:
        out["BU"] = reconcile_bu(y[bottom_rows], S)
    if "OP" in need:
        out["OP"] = reconcile_ols(y, S)
    if "MinT" in need:
        if W is None:
            raise ReconciliationError("MinT needs an error covariance")
        out["MinT"] = reconcile_mint(y, S, W)
    if "Comb_av" in need:
        out["Comb_av"] = combine_average(out["BU"], out["OP"], out["MinT"])
    result = {k: out[k] for k in methods}
    for k, v in result.items():
        if np.any(v < 0):
            logger.warning("%s produced %d negative rates%s", k, int(np.sum(v < 0)),
                           "; clamped to zero" if clamp else "")
    if clamp:
        result = {k: clamp_negative(v) for k, v in result.items()}
    return result


def _identity_rows(S: np.ndarray) -> np.ndarray:
    """Row index of the unit row for each bottom column."""
    rows = []
    for j in range(S.shape[1]):
        e = np.zeros(S.shape[1])
        e[j] = 1.0
        hit = np.flatnonzero(np.all(S == e, axis=1))
        if not len(hit):
            raise ReconciliationError(f"no identity row for bottom column {j}")
        rows.append(int(hit[0]))
    return np.array(rows)
