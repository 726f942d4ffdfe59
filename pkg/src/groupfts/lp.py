"""Dense two-phase tableau simplex for small linear programs.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq`` and
``x >= 0``.  Intended for problems with at most a few hundred columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    iterations: int
    reduced_costs: np.ndarray


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


def _run(T: np.ndarray, basis: np.ndarray, n_active: int, tol: float, max_iter: int) -> int:
    """Minimise the objective in the last row of ``T`` over the first ``n_active`` columns.

    The last row holds reduced costs; the last column holds the right-hand side.
    Dantzig pricing, switching to Bland's rule after a run of degenerate pivots.
    """
    m = T.shape[0] - 1
    degenerate = 0
    it = 0
    while it < max_iter:
        rc = T[m, :n_active]
        if degenerate > 20:
            cand = np.flatnonzero(rc < -tol)
            if not len(cand):
                return it
            col = int(cand[0])
        else:
            col = int(np.argmin(rc))
            if rc[col] >= -tol:
                return it
        a = T[:m, col]
        pos = a > tol
        if not pos.any():
            raise Unbounded("objective is unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / a[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        row = int(ties[np.argmin(basis[ties])])
        degenerate = degenerate + 1 if T[row, -1] <= tol else 0
        _pivot(T, row, col)
        basis[row] = col
        it += 1
    raise LPError(f"simplex did not terminate within {max_iter} pivots")


def linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float = 1e-9,
            max_iter: int = 50_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = len(c)
    blocks, rhs, slack_rows = [], [], 0
    if A_ub is not None and len(A_ub):
        A_ub = np.asarray(A_ub, dtype=float).reshape(-1, n)
        blocks.append(A_ub)
        rhs.append(np.asarray(b_ub, dtype=float))
        slack_rows = A_ub.shape[0]
    if A_eq is not None and len(A_eq):
        A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
        blocks.append(A_eq)
        rhs.append(np.asarray(b_eq, dtype=float))
    if not blocks:
        if np.any(c < 0):
            raise Unbounded("objective is unbounded below")
        return LPResult(np.zeros(n), 0.0, 0, c.copy())

    A = np.vstack(blocks)
    b = np.concatenate(rhs)
    m = A.shape[0]
    slack = np.zeros((m, slack_rows))
    slack[np.arange(slack_rows), np.arange(slack_rows)] = 1.0
    A = np.hstack([A, slack])
    neg = b < 0
    A[neg] *= -1.0
    b = np.where(neg, -b, b)
    n_std = A.shape[1]

    # Reuse unit columns as the starting basis, add artificials elsewhere.
    basis = np.full(m, -1)
    nz = A != 0
    unit = (nz.sum(axis=0) == 1) & np.isclose(A, 1.0).any(axis=0)
    for j in np.flatnonzero(unit):
        i = int(np.flatnonzero(nz[:, j])[0])
        if basis[i] < 0 and A[i, j] == 1.0:
            basis[i] = j
    art_rows = np.flatnonzero(basis < 0)
    n_art = len(art_rows)
    T = np.zeros((m + 1, n_std + n_art + 1))
    T[:m, :n_std] = A
    T[:m, -1] = b
    for k, i in enumerate(art_rows):
        T[i, n_std + k] = 1.0
        basis[i] = n_std + k

    iters = 0
    if n_art:
        # Phase one: minimise the sum of artificials.
        T[m, :] = 0.0
        T[m, n_std:n_std + n_art] = 1.0
        for i in art_rows:
            T[m] -= T[i]
        iters += _run(T, basis, n_std + n_art, tol, max_iter)
        if T[m, -1] < -1e-7 * max(1.0, np.abs(b).max()):
            raise Infeasible("no feasible point")
        keep = np.ones(m + 1, dtype=bool)
        for i in range(m):
            if basis[i] >= n_std:
                cand = np.flatnonzero(np.abs(T[i, :n_std]) > tol)
                if len(cand):
                    _pivot(T, i, int(cand[0]))
                    basis[i] = int(cand[0])
                else:
                    keep[i] = False  # redundant row
        T = np.delete(T[keep], np.s_[n_std:n_std + n_art], axis=1)
        basis = basis[keep[:m]]
        m = len(basis)

    cost = np.concatenate([c, np.zeros(n_std - n)])
    T[m, :] = 0.0
    T[m, :n_std] = cost
    for i in range(m):
        if cost[basis[i]] != 0.0:
            T[m] -= cost[basis[i]] * T[i]
    iters += _run(T, basis, n_std, tol, max_iter)

    x_std = np.zeros(n_std)
    x_std[basis] = T[:m, -1]
    x = x_std[:n]
    return LPResult(x=x, fun=float(c @ x), iterations=iters, reduced_costs=T[m, :n_std].copy())
