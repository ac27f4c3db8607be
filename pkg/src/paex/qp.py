"""Small dense convex quadratic programming.

Primal active-set method over the inequality constraints, with equality
constraints eliminated up front through a null-space basis.  Problem sizes
here are at most a few hundred variables, so everything is dense numpy.
Pivoting is deterministic (lowest index first) so repeated runs are
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


@dataclass
class QuadraticProgram:
    """min 0.5 x^T H x + g^T x  s.t.  A_eq x = b_eq,  A_in x <= b_in."""

    hessian: np.ndarray
    linear_term: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=float)
        self.linear_term = np.asarray(self.linear_term, dtype=float)
        n = self.linear_term.shape[0]
        if self.hessian.shape != (n, n):
            raise ValueError("hessian shape inconsistent with linear term")
        if np.max(np.abs(self.hessian - self.hessian.T)) > 1e-12 * (
            1.0 + np.max(np.abs(self.hessian))
        ):
            raise ValueError("hessian must be symmetric")
        for name in ("a_eq", "a_in"):
            a = getattr(self, name)
            if a is not None:
                a = np.atleast_2d(np.asarray(a, dtype=float))
                if a.size == 0:
                    a = None
                elif a.shape[1] != n:
                    raise ValueError(f"{name} has wrong number of columns")
                setattr(self, name, a)
        self.b_eq = None if self.a_eq is None else np.atleast_1d(np.asarray(self.b_eq, float))
        self.b_in = None if self.a_in is None else np.atleast_1d(np.asarray(self.b_in, float))

    @property
    def n(self) -> int:
        return self.linear_term.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return 0.5 * x @ self.hessian @ x + self.linear_term @ x


@dataclass
class QPResult:
    x: np.ndarray
    status: str  # "optimal" | "infeasible" | "max_iter"
    iterations: int = 0
    active_set: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _nullspace(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > tol * max(a.shape) * (s[0] if s.size else 1.0)))
    return vt[rank:].T


def _solve_kkt(h: np.ndarray, g: np.ndarray, aw: np.ndarray):
    """Equality-constrained step: min 0.5 p^T H p + g^T p s.t. Aw p = 0."""
    n = h.shape[0]
    m = aw.shape[0] if aw.size else 0
    if m == 0:
        try:
            p = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            p = np.linalg.lstsq(h, -g, rcond=None)[0]
        return p, np.zeros(0)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    kkt[:n, n:] = aw.T
    kkt[n:, :n] = aw
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _phase1(g_in: np.ndarray, h_in: np.ndarray):
    """Feasible point of G y <= h via an LP minimizing the worst violation."""
    m, n = g_in.shape
    # variables (y, t): min t  s.t.  G y - t <= h
    c = np.zeros(n + 1)
    c[-1] = 1.0
    a_ub = np.hstack([g_in, -np.ones((m, 1))])
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=h_in,
        bounds=[(None, None)] * n + [(0, None)],
        method="highs",
    )
    if not res.success:
        return None
    y, t = res.x[:n], res.x[-1]
    if t > 1e-7:
        return None
    return y


def solve_qp(
    qp: QuadraticProgram,
    x0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> QPResult:
    """Solve a convex QP; deterministic for identical inputs.

    x0, when given and feasible, is used as the starting point; otherwise a
    phase-1 LP finds one.  Returns status "infeasible" when the constraint
    set is empty and "max_iter" (with the best iterate) when the active-set
    loop hits its cap.
    """
    n = qp.n
    scale = 1.0 + np.max(np.abs(qp.hessian))
    h_reg = qp.hessian + (1e-12 * scale) * np.eye(n)

    # eliminate equalities: x = xp + Z y
    if qp.a_eq is not None:
        xp, _, _, _ = np.linalg.lstsq(qp.a_eq, qp.b_eq, rcond=None)
        if np.max(np.abs(qp.a_eq @ xp - qp.b_eq)) > 1e-7 * (1.0 + np.max(np.abs(qp.b_eq))):
            return QPResult(xp, "infeasible")
        z = _nullspace(qp.a_eq)
    else:
        xp = np.zeros(n)
        z = np.eye(n)

    if z.shape[1] == 0:
        # equalities fully determine the point
        if qp.a_in is not None and np.any(qp.a_in @ xp > qp.b_in + 1e-7):
            return QPResult(xp, "infeasible")
        return QPResult(xp, "optimal")

    hr = z.T @ h_reg @ z
    gr = z.T @ (qp.linear_term + h_reg @ xp)
    if qp.a_in is not None:
        gi = qp.a_in @ z
        hi = qp.b_in - qp.a_in @ xp
    else:
        gi = np.zeros((0, z.shape[1]))
        hi = np.zeros(0)
    m = gi.shape[0]

    # starting point
    y = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        y_try = z.T @ (x0 - xp)
        x_chk = xp + z @ y_try
        eq_ok = qp.a_eq is None or np.max(np.abs(qp.a_eq @ x_chk - qp.b_eq)) <= 1e-7
        in_ok = m == 0 or np.all(gi @ y_try <= hi + 1e-9)
        if eq_ok and in_ok:
            y = y_try
    if y is None:
        if m == 0:
            y = np.zeros(z.shape[1])
        else:
            y = _phase1(gi, hi)
            if y is None:
                return QPResult(xp, "infeasible")
            # clamp round-off violations from the LP
            viol = gi @ y - hi
            if np.max(viol) > 0:
                y = y - 0  # keep as is; active-set tolerates 1e-9 slack

    if max_iter is None:
        max_iter = 50 + 20 * (z.shape[1] + m)

    work: list[int] = []
    row_norms = 1.0 + np.linalg.norm(gi, axis=1) if m else np.zeros(0)
    for it in range(max_iter):
        aw = gi[work] if work else np.zeros((0, z.shape[1]))
        grad = hr @ y + gr
        p, lam = _solve_kkt(hr, grad, aw)
        if np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(y)):
            if len(work) == 0:
                return QPResult(xp + z @ y, "optimal", it, list(work))
            lam_min = np.min(lam)
            if lam_min >= -tol * scale:
                return QPResult(xp + z @ y, "optimal", it, list(work))
            # drop the most negative multiplier, lowest index on ties
            drop_pos = int(np.flatnonzero(lam <= lam_min + 1e-14 * scale)[0])
            work.pop(drop_pos)
            continue
        # step to the nearest blocking constraint
        alpha = 1.0
        block = -1
        for i in range(m):
            if i in work:
                continue
            gp = gi[i] @ p
            if gp > 1e-12 * row_norms[i]:
                a_i = (hi[i] - gi[i] @ y) / gp
                if a_i < alpha - 1e-12:
                    alpha = max(a_i, 0.0)
                    block = i
        y = y + alpha * p
        if block >= 0:
            work.append(block)
            work.sort()
    return QPResult(xp + z @ y, "max_iter", max_iter, list(work))
