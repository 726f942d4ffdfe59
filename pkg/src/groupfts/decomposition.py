"""Univariate and multivariate functional principal component analysis.

A block holds ``omega`` related series of curves on a common age grid.  The
centred curves of all series are stacked into one vector per year and the
covariance of the stacked vectors is decomposed under a quadrature metric, so
every series shares one eigenvalue sequence and one set of scores.  A block
with a single series is ordinary FPCA.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class FpcaModel:
    mean: np.ndarray  # (omega, p)
    eigenvalues: np.ndarray  # (r,), non-increasing
    eigenfunctions: np.ndarray  # (r, omega, p)
    scores: np.ndarray  # (n, r)
    K: int
    quadrature: np.ndarray  # (p,)

    @property
    def omega(self) -> int:
        return self.mean.shape[0]

    @property
    def explained(self) -> np.ndarray:
        lam = np.clip(self.eigenvalues, 0.0, None)
        total = lam.sum()
        return np.cumsum(lam) / total if total > 0 else np.ones_like(lam)

    def truncate(self, K: int) -> "FpcaModel":
        return FpcaModel(self.mean, self.eigenvalues, self.eigenfunctions, self.scores, int(K), self.quadrature)

    # -- CSV bundle ------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        omega, p = self.mean.shape
        with open(d / "means.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "age", "mean", "quadrature"])
            for l in range(omega):
                for i in range(p):
                    w.writerow([l, i, repr(float(self.mean[l, i])), repr(float(self.quadrature[i]))])
        with open(d / "eigenvalues.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "eigenvalue", "retained"])
            for k, lam in enumerate(self.eigenvalues):
                w.writerow([k + 1, repr(float(lam)), int(k < self.K)])
        with open(d / "eigenfunctions.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "series", "age", "value"])
            for k in range(self.eigenfunctions.shape[0]):
                for l in range(omega):
                    for i in range(p):
                        w.writerow([k + 1, l, i, repr(float(self.eigenfunctions[k, l, i]))])
        with open(d / "scores.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "k", "score"])
            for t in range(self.scores.shape[0]):
                for k in range(self.scores.shape[1]):
                    w.writerow([t, k + 1, repr(float(self.scores[t, k]))])

    @classmethod
    def load(cls, directory: str | Path) -> "FpcaModel":
        d = Path(directory)

        def rows(name):
            with open(d / name, newline="") as fh:
                r = csv.reader(fh)
                next(r)
                return [row for row in r if row]

        m = rows("means.csv")
        omega = max(int(r[0]) for r in m) + 1
        p = max(int(r[1]) for r in m) + 1
        mean = np.zeros((omega, p))
        quad = np.zeros(p)
        for l, i, v, q in m:
            mean[int(l), int(i)] = float(v)
            quad[int(i)] = float(q)
        ev = rows("eigenvalues.csv")
        lam = np.array([float(r[1]) for r in ev])
        K = sum(int(r[2]) for r in ev)
        phi = np.zeros((len(lam), omega, p))
        for k, l, i, v in rows("eigenfunctions.csv"):
            phi[int(k) - 1, int(l), int(i)] = float(v)
        sc = rows("scores.csv")
        n = max(int(r[0]) for r in sc) + 1
        scores = np.zeros((n, len(lam)))
        for t, k, v in sc:
            scores[int(t), int(k) - 1] = float(v)
        return cls(mean, lam, phi, scores, K, quad)


def quadrature_weights(x: np.ndarray, rule: str = "equal") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if rule == "equal":
        return np.ones(len(x))
    if rule == "trapezoid":
        h = np.diff(x)
        w = np.zeros(len(x))
        w[:-1] += h / 2
        w[1:] += h / 2
        return w
    raise ValueError(f"unknown quadrature rule {rule!r}")


def estimate_mean(block: np.ndarray) -> np.ndarray:
    """Pointwise mean over years of a ``(omega, n, p)`` block."""
    block = np.asarray(block, dtype=float)
    if block.ndim == 2:
        block = block[None]
    return block.mean(axis=1)


def select_K(eigenvalues, threshold: float = 0.95) -> int:
    """Smallest K whose leading eigenvalues explain at least ``threshold`` of the positive total."""
    lam = np.asarray(eigenvalues, dtype=float)
    pos = lam[lam > 0]
    if not len(pos):
        warnings.warn("all eigenvalues are zero; degenerate block, using K = 1", stacklevel=2)
        return 1
    ratio = np.cumsum(np.clip(lam, 0.0, None)) / pos.sum()
    # Guard the comparison against rounding in the cumulative sum.
    hit = np.flatnonzero(ratio >= threshold - 1e-12)
    return int(hit[0]) + 1


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (first on ties) is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def decompose(block, quadrature=None, threshold: float = 0.95, method: str = "auto") -> FpcaModel:
    """Joint FPCA of a ``(omega, n, p)`` block of curves.

    The covariance uses the ``n - 1`` divisor.  ``method`` chooses the primal
    ``(omega p) x (omega p)`` eigenproblem or the dual ``n x n`` Gram problem;
    ``"auto"`` takes the smaller one.
    """
    block = np.asarray(block, dtype=float)
    if block.ndim == 2:
        block = block[None]
    omega, n, p = block.shape
    if n < 2:
        raise ValueError("need at least two curves per series")
    bad = np.argwhere(~np.isfinite(block))
    if len(bad):
        l, t, i = bad[0]
        raise ValueError(f"non-finite value in series {l}, year index {t}, age index {i}")
    q = np.ones(p) if quadrature is None else np.asarray(quadrature, dtype=float)
    if q.shape != (p,) or np.any(q <= 0):
        raise ValueError("quadrature weights must be positive, one per age")

    mean = block.mean(axis=1)
    centred = block - mean[:, None, :]
    X = np.transpose(centred, (1, 0, 2)).reshape(n, omega * p)  # years x stacked ages
    sq = np.tile(np.sqrt(q), omega)
    Xw = X * sq
    P = omega * p
    rank = min(n - 1, P)

    if method == "auto":
        method = "dual" if P > n else "primal"
    if method == "primal":
        lam, U = np.linalg.eigh(Xw.T @ Xw / (n - 1))
        order = np.argsort(lam)[::-1][:rank]
        lam, U = lam[order], U[:, order]
    elif method == "dual":
        lam, V = np.linalg.eigh(Xw @ Xw.T / (n - 1))
        order = np.argsort(lam)[::-1][:rank]
        lam, V = lam[order], V[:, order]
        U = Xw.T @ V / np.sqrt((n - 1) * np.where(lam > 0, lam, np.inf))
    else:
        raise ValueError(f"unknown method {method!r}")

    # Keep only directions that carry variance; a flat block keeps one.
    r = max(1, int(np.sum(lam > max(lam[0], 0.0) * 1e-12))) if lam[0] > 0 else 1
    lam = np.clip(lam[:r], 0.0, None)
    U = U[:, :r]
    if not lam[0] > 0:
        U = np.zeros((P, 1))
        U[0, 0] = 1.0
    U = _fix_signs(U)
    phi_stacked = U / sq[:, None]
    eigenfunctions = phi_stacked.T.reshape(r, omega, p)
    scores = Xw @ U
    K = min(select_K(lam, threshold), r)
    return FpcaModel(mean, lam, eigenfunctions, scores, K, q)


def reconstruct(model: FpcaModel, scores) -> np.ndarray:
    """Curves ``mean + sum_k scores_k * phi_k`` for one year (``(K,)``) or many (``(n, K)``)."""
    s = np.asarray(scores, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    K = s.shape[1]
    if K > model.eigenfunctions.shape[0]:
        raise ValueError(f"{K} scores given but the model has {model.eigenfunctions.shape[0]} components")
    if K != model.K and K != model.eigenfunctions.shape[0]:
        raise ValueError(f"expected {model.K} scores, got {K}")
    out = model.mean[None] + np.einsum("tk,klp->tlp", s, model.eigenfunctions[:K])
    return out[0] if single else out
