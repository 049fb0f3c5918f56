"""Convex cones and a small dense LP solver.

The geometric substrate for everything else: state and effect cones are
`Cone` values, and the optimization needs (membership, classical norms,
optimal tests) reduce to linear programs solved by a two-phase dense
simplex with Bland's rule, so results are deterministic for a given input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
# pivot threshold, below this a coefficient is treated as zero
_EPS = 1e-10
_MAX_ITER = 50000


@dataclass(frozen=True)
class Cone:
    """A convex cone in R^n.

    Any of three descriptions may be present: generators (V-representation
    rays), facets (H-representation rows f with f @ x >= 0), or an analytic
    membership predicate. Non-polyhedral cones (the quantum positive cones)
    carry only the predicate.
    """

    ambient_dim: int
    generators: tuple = ()
    facets: tuple = ()
    membership: Optional[Callable[[np.ndarray, float], bool]] = None
    name: str = ""

    def __post_init__(self):
        for g in self.generators:
            if len(g) != self.ambient_dim:
                raise ValueError("generator dimension mismatch")
        for f in self.facets:
            if len(f) != self.ambient_dim:
                raise ValueError("facet dimension mismatch")


def orthant(n: int) -> Cone:
    eye = np.eye(n)
    return Cone(n, generators=tuple(eye), facets=tuple(eye), name="orthant")


def cone_contains(cone: Cone, x: Sequence[float], tol: float = DEFAULT_TOL) -> bool:
    """Membership x in cone, within tol.

    Dispatch: analytic predicate if present, else facet checks, else a
    phase-1 LP over the generators.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (cone.ambient_dim,):
        raise ValueError("point dimension mismatch")
    if cone.membership is not None:
        return bool(cone.membership(x, tol))
    if len(cone.facets) > 0:
        scale = max(1.0, float(np.max(np.abs(x))))
        return all(float(np.dot(f, x)) >= -tol * scale for f in cone.facets)
    if len(cone.generators) == 0:
        return bool(np.max(np.abs(x)) <= tol)
    scale = float(np.max(np.abs(x)))
    if scale <= tol:
        return True
    g = np.stack(cone.generators, axis=1)
    prob = LpProblem(
        objective=np.zeros(g.shape[1]),
        a_eq=g,
        b_eq=x / scale,
        cones=((orthant(g.shape[1]), tuple(range(g.shape[1]))),),
    )
    res = lp_solve(prob, tol=tol)
    return res.status == "optimal"


def dual_cone_contains(cone: Cone, f: Sequence[float], tol: float = DEFAULT_TOL) -> bool:
    """Membership of a covector f in the dual cone {f : <f, x> >= 0 on cone}."""
    f = np.asarray(f, dtype=float)
    if f.shape != (cone.ambient_dim,):
        raise ValueError("covector dimension mismatch")
    if len(cone.generators) > 0:
        scale = max(1.0, float(np.max(np.abs(f))))
        return all(float(np.dot(f, g)) >= -tol * scale for g in cone.generators)
    if len(cone.facets) > 0:
        # dual of {x : F x >= 0} is the conic hull of the rows of F
        rows = Cone(cone.ambient_dim, generators=tuple(np.asarray(r, dtype=float)
                                                       for r in cone.facets))
        return cone_contains(rows, f, tol)
    raise ValueError("dual membership needs generators or facets")


@dataclass(frozen=True)
class LpProblem:
    """max (or min) objective @ x subject to a_eq @ x = b_eq and cone memberships.

    cones is a sequence of (Cone, index tuple) pairs; each cone must carry an
    H-representation, and the indexed slice of x is constrained to it.
    Variables not covered by any cone slice are free.
    """

    objective: np.ndarray
    a_eq: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    b_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cones: tuple = ()
    maximize: bool = True


@dataclass(frozen=True)
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: Optional[float] = None
    x: Optional[np.ndarray] = None
    residuals: Optional[dict] = None


def _inequality_rows(prob: LpProblem, n: int) -> np.ndarray:
    rows = []
    for cone, idx in prob.cones:
        if len(cone.facets) == 0:
            raise ValueError("cone constraints need an H-representation")
        idx = tuple(idx)
        for facet in cone.facets:
            row = np.zeros(n)
            for local, j in enumerate(idx):
                row[j] = facet[local]
            rows.append(row)
    return np.asarray(rows) if rows else np.zeros((0, n))


def _pivot(tab: np.ndarray, basis: list, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for i in range(tab.shape[0]):
        if i != row and abs(tab[i, col]) > 0.0:
            tab[i] -= tab[i, col] * tab[row]
    basis[row] = col


def _iterate(tab: np.ndarray, basis: list, cost: np.ndarray,
             allowed: int) -> str:
    """Simplex iterations with Bland's rule on the first `allowed` columns.

    tab is (m, N+1) with the rhs in the last column. Returns "optimal" or
    "unbounded". Deterministic: entering = smallest eligible column index,
    leaving = smallest basis index among ratio ties.
    """
    m = tab.shape[0]
    for _ in range(_MAX_ITER):
        cb = cost[basis]
        red = cost[:allowed] - cb @ tab[:, :allowed]
        enter = -1
        for j in range(allowed):
            if red[j] < -_EPS:
                enter = j
                break
        if enter < 0:
            return "optimal"
        leave = -1
        best = np.inf
        for i in range(m):
            a = tab[i, enter]
            if a > _EPS:
                ratio = tab[i, -1] / a
                if ratio < best - _EPS or (abs(ratio - best) <= _EPS and
                                           (leave < 0 or basis[i] < basis[leave])):
                    best = ratio
                    leave = i
        if leave < 0:
            return "unbounded"
        _pivot(tab, basis, leave, enter)
    raise RuntimeError("simplex iteration limit exceeded")


def lp_solve(prob: LpProblem, tol: float = DEFAULT_TOL) -> LpResult:
    """Two-phase dense simplex.

    Free variables are split x = u - v, facet inequalities get slack
    variables, and phase 1 minimizes artificial variables. On success the
    returned residuals dict reports primal feasibility, dual feasibility
    and the duality gap, each below tol for an optimal outcome.
    """
    c0 = np.asarray(prob.objective, dtype=float)
    n = len(c0)
    a_eq = np.asarray(prob.a_eq, dtype=float).reshape(-1, n) if np.size(prob.a_eq) else np.zeros((0, n))
    b_eq = np.asarray(prob.b_eq, dtype=float).reshape(-1)
    f_rows = _inequality_rows(prob, n)

    # standard form: z = (u, v, s) >= 0, x = u - v
    m_eq, m_in = a_eq.shape[0], f_rows.shape[0]
    m = m_eq + m_in
    n_std = 2 * n + m_in
    a_std = np.zeros((m, n_std))
    b_std = np.zeros(m)
    a_std[:m_eq, :n] = a_eq
    a_std[:m_eq, n:2 * n] = -a_eq
    b_std[:m_eq] = b_eq
    a_std[m_eq:, :n] = f_rows
    a_std[m_eq:, n:2 * n] = -f_rows
    for k in range(m_in):
        a_std[m_eq + k, 2 * n + k] = -1.0
    c_std = np.zeros(n_std)
    sign = -1.0 if prob.maximize else 1.0
    c_std[:n] = sign * c0
    c_std[n:2 * n] = -sign * c0

    flip = b_std < 0
    a_std[flip] *= -1.0
    b_std[flip] *= -1.0

    # phase 1
    tab = np.hstack([a_std, np.eye(m), b_std.reshape(-1, 1)])
    basis = list(range(n_std, n_std + m))
    cost1 = np.concatenate([np.zeros(n_std), np.ones(m)])
    status = _iterate(tab, basis, cost1, n_std + m)
    if status != "optimal":  # pragma: no cover - phase 1 is always bounded
        raise RuntimeError("phase 1 failed")
    phase1_value = float(cost1[basis] @ tab[:, -1])
    if phase1_value > tol * max(1.0, float(np.max(np.abs(b_std))) if m else 1.0):
        return LpResult(status="infeasible")

    # drive artificial variables out of the basis, drop redundant rows
    keep = []
    for i in range(len(basis)):
        if basis[i] >= n_std:
            piv = -1
            for j in range(n_std):
                if abs(tab[i, j]) > _EPS:
                    piv = j
                    break
            if piv >= 0:
                _pivot(tab, basis, i, piv)
                keep.append(i)
            # else: redundant row, dropped below
        else:
            keep.append(i)
    tab = tab[keep]
    basis = [basis[i] for i in keep]
    tab = np.hstack([tab[:, :n_std], tab[:, -1:]])

    # phase 2
    status = _iterate(tab, basis, c_std, n_std)
    if status == "unbounded":
        return LpResult(status="unbounded")

    z = np.zeros(n_std)
    for i, bi in enumerate(basis):
        z[bi] = tab[i, -1]
    x = z[:n] - z[n:2 * n]
    value = float(c0 @ x)

    # KKT residuals recomputed from the original data
    primal = 0.0
    if m_eq:
        primal = float(np.max(np.abs(a_eq @ x - b_eq)))
    slack = f_rows @ x if m_in else np.zeros(0)
    if m_in:
        primal = max(primal, float(max(0.0, -np.min(slack))))
    # dual multipliers from the final basis of the standard form
    a_final = a_std[keep]
    b_final = b_std[keep]
    bmat = a_final[:, basis]
    try:
        y = np.linalg.solve(bmat.T, c_std[basis])
    except np.linalg.LinAlgError:  # pragma: no cover
        y = np.linalg.lstsq(bmat.T, c_std[basis], rcond=None)[0]
    red = c_std - y @ a_final
    dual = float(max(0.0, -np.min(red))) if len(red) else 0.0
    comp = float(abs(np.dot(red, z)))
    gap = abs(float(c_std @ z) - float(y @ b_final)) if len(b_final) else 0.0
    residuals = {"primal": primal, "dual": dual, "complementarity": comp, "gap": gap}
    return LpResult(status="optimal", value=value, x=x, residuals=residuals)
