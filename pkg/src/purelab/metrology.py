"""Operational distances and optimal tests.

The state norm is sup over two-outcome tests of the pairing spread, which
is the trace norm in the matrix models and an LP over the unit box of
effects in the classical model. Discrimination, worst-case symmetric
error tests and a seesaw lower bound for the induced norm on maps
(diamond-type, with an ancilla of equal size) build on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from purelab.cones import LpProblem, lp_solve, orthant
from purelab.theories import (
    CLASSICAL,
    QUANTUM,
    REAL_QUANTUM,
    EffectVec,
    LinearMap,
    StateVec,
    SystemLabel,
    TheoryModel,
    UnsupportedOperation,
)

DEFAULT_TOL = 1e-9
_SEESAW_STOP = 1e-13
_SEESAW_ITERS = 300


def _box_lp_sup(delta: np.ndarray) -> float:
    """sup_{0 <= a <= 1} <a, delta> via the LP route."""
    n = len(delta)
    objective = np.concatenate([delta, np.zeros(n)])
    a_eq = np.hstack([np.eye(n), np.eye(n)])
    b_eq = np.ones(n)
    prob = LpProblem(objective=objective, a_eq=a_eq, b_eq=b_eq,
                     cones=((orthant(2 * n), tuple(range(2 * n))),))
    res = lp_solve(prob)
    if res.status != "optimal":  # pragma: no cover - box LP is always solvable
        raise RuntimeError("box LP failed")
    return float(res.value)


def state_norm(model: TheoryModel, system: SystemLabel,
               delta: np.ndarray) -> float:
    """Operational norm of a difference of states.

    Matrix models: trace norm by eigendecomposition. Classical: two LPs
    over the [0, 1]^n effect box (best achiever minus worst achiever).
    """
    delta = np.asarray(delta, dtype=float)
    if model.theory == CLASSICAL:
        return _box_lp_sup(delta) + _box_lp_sup(-delta)
    return model.op_norm(system, delta)


def state_distance(model: TheoryModel, x: StateVec, y: StateVec) -> float:
    if x.system != y.system:
        raise ValueError("distance across different systems")
    return state_norm(model, x.system, x.coords - y.coords)


def effect_norm(model: TheoryModel, system: SystemLabel,
                delta: np.ndarray) -> float:
    """sup over normalized states of |<delta, rho>|.

    No ancilla is needed: the matrix models give the operator norm, the
    classical model the max absolute entry.
    """
    delta = np.asarray(delta, dtype=float)
    if model.theory == CLASSICAL:
        return float(np.max(np.abs(delta))) if len(delta) else 0.0
    m = model.from_coords(system, delta)
    return float(np.max(np.abs(np.linalg.eigvalsh(m))))


@dataclass(frozen=True)
class DiscriminationResult:
    p_success: float
    test: tuple
    witness: np.ndarray


def _positive_part_effect(model: TheoryModel, system: SystemLabel,
                          delta: np.ndarray) -> EffectVec:
    """Projector (indicator) onto the strictly positive part of delta."""
    if model.theory == CLASSICAL:
        return EffectVec(system, (delta > 0.0).astype(float))
    m = model.from_coords(system, delta)
    vals, vecs = np.linalg.eigh(m)
    proj = np.zeros_like(m)
    for lam, v in zip(vals, vecs.T):
        if lam > 0.0:
            proj = proj + np.outer(v, np.conj(v))
    return EffectVec(system, model.to_coords(system, proj))


def discriminate(model: TheoryModel, rho0: StateVec, rho1: StateVec,
                 pi0: float = 0.5, pi1: float = 0.5,
                 tol: float = DEFAULT_TOL) -> DiscriminationResult:
    """Minimum-error discrimination of rho0 vs rho1 with priors (pi0, pi1).

    Optimum p = (1 + || pi1 rho1 - pi0 rho0 ||) / 2, achieved by the
    two-outcome test splitting on the sign of the witness.
    """
    if rho0.system != rho1.system:
        raise ValueError("states live on different systems")
    if pi0 < -tol or pi1 < -tol or abs(pi0 + pi1 - 1.0) > tol:
        raise ValueError("priors must be nonnegative and sum to one")
    system = rho0.system
    e = model.deterministic_effect(system)
    zero = EffectVec(system, np.zeros(system.coord_dim))
    if pi0 <= tol:
        return DiscriminationResult(1.0, (zero, e), rho1.coords * 1.0)
    if pi1 <= tol:
        return DiscriminationResult(1.0, (e, zero), -rho0.coords)
    delta = pi1 * rho1.coords - pi0 * rho0.coords
    a1 = _positive_part_effect(model, system, delta)
    a0 = EffectVec(system, e.coords - a1.coords)
    p = pi0 * a0.pair(rho0) + pi1 * a1.pair(rho1)
    p_norm = (1.0 + state_norm(model, system, delta)) / 2.0
    if abs(p - p_norm) > 1e-8:  # pragma: no cover - internal consistency
        raise RuntimeError("discrimination test does not achieve the norm value")
    p = min(1.0, max(p, max(pi0, pi1)))
    return DiscriminationResult(float(p), (a0, a1), delta)


@dataclass(frozen=True)
class WorstCaseResult:
    status: str  # "ok" | "indistinguishable"
    test: Optional[tuple] = None
    error: Optional[float] = None


def worst_case_test(model: TheoryModel, rho0: StateVec, rho1: StateVec,
                    tol: float = DEFAULT_TOL) -> WorstCaseResult:
    """A two-outcome test with equal error probabilities strictly below 1/2.

    Construction: take an effect a with <a, rho0> > <a, rho1> (sign
    projector of the difference), average it with the unit effect when
    <a, rho1> < 1/2, then rescale by q = 1 / (<a, rho0> + <a, rho1>).
    The resulting test satisfies p(1|0) = p(0|1) = q <a, rho1> < 1/2.
    """
    if rho0.system != rho1.system:
        raise ValueError("states live on different systems")
    system = rho0.system
    if state_norm(model, system, rho0.coords - rho1.coords) <= tol:
        return WorstCaseResult(status="indistinguishable")
    e = model.deterministic_effect(system)
    a = _positive_part_effect(model, system, rho0.coords - rho1.coords)
    if a.pair(rho1) < 0.5:
        a = EffectVec(system, (a.coords + e.coords) / 2.0)
    s0, s1 = a.pair(rho0), a.pair(rho1)
    q = 1.0 / (s0 + s1)
    a0 = EffectVec(system, q * a.coords)
    a1 = EffectVec(system, e.coords - a0.coords)
    error = q * s1
    return WorstCaseResult(status="ok", test=(a0, a1), error=float(error))


@dataclass(frozen=True)
class MapNormResult:
    lower_bound: float
    certificate: StateVec
    ancilla: SystemLabel
    restarts: int


def _seesaw_once(model, lifted: LinearMap, joint_in, joint_out,
                 psi: np.ndarray) -> tuple:
    best = -1.0
    for _ in range(_SEESAW_ITERS):
        rho_coords = model.to_coords(joint_in, np.outer(psi, np.conj(psi)))
        theta = model.from_coords(joint_out, lifted.matrix @ rho_coords)
        vals, vecs = np.linalg.eigh(theta)
        value = float(np.sum(np.abs(vals)))
        x = (vecs * np.sign(vals)) @ np.conj(vecs).T
        if value <= best + _SEESAW_STOP:
            return value, psi
        best = value
        h = model.from_coords(joint_in,
                              lifted.matrix.T @ model.to_coords(joint_out, x))
        hvals, hvecs = np.linalg.eigh(h)
        psi = hvecs[:, -1]
    return best, psi


def transformation_norm(model: TheoryModel, delta: LinearMap,
                        budget: int = 50, seed: int = 0) -> MapNormResult:
    """Seesaw lower bound on the ancilla-assisted norm of a map difference.

    Quantum: alternates between the optimal Hermitian sign witness for a
    fixed pure input on A (x) ancilla (ancilla of equal dimension) and the
    optimal input for a fixed witness; the first start is maximally
    entangled, the remaining budget - 1 starts are Haar random with the
    given seed. Classical: exact by vertex enumeration (the ancilla lift
    adds nothing over the best vertex). Real-quantum: unsupported.
    """
    if model.theory == REAL_QUANTUM:
        raise UnsupportedOperation(
            "map norm needs an ancilla lift; real-quantum coordinate maps "
            "do not determine one")
    if model.theory == CLASSICAL:
        anc = model.system(delta.input.coord_dim)
        best_j, best_val = 0, -1.0
        for j in range(delta.input.coord_dim):
            val = float(np.sum(np.abs(delta.matrix[:, j])))
            if val > best_val + 1e-15:
                best_j, best_val = j, val
        vertex = np.zeros(delta.input.coord_dim)
        vertex[best_j] = 1.0
        anc_point = np.zeros(anc.coord_dim)
        anc_point[0] = 1.0
        cert = model.embed_product(StateVec(delta.input, vertex),
                                  StateVec(anc, anc_point))
        return MapNormResult(best_val, cert, anc, restarts=0)

    h_in = delta.input.hilbert_dim
    anc = model.system(h_in)
    joint_in = model.compose(delta.input, anc)
    joint_out = model.compose(delta.output, anc)
    lifted = model.lift_local(LinearMap(delta.input, delta.output, delta.matrix),
                              anc, where="left")
    rng = np.random.default_rng(seed)
    starts = [np.array([1.0 if i % (h_in + 1) == 0 else 0.0
                        for i in range(h_in * h_in)]) / np.sqrt(h_in)]
    for _ in range(max(0, budget - 1)):
        v = rng.normal(size=h_in * h_in) + 1j * rng.normal(size=h_in * h_in)
        starts.append(v / np.linalg.norm(v))
    best_val, best_psi = -1.0, starts[0]
    for psi0 in starts:
        val, psi = _seesaw_once(model, lifted, joint_in, joint_out, psi0)
        if val > best_val + 1e-12:
            best_val, best_psi = val, psi
    cert = model.pure_state(joint_in, best_psi)
    return MapNormResult(float(best_val), cert, anc, restarts=len(starts))


def map_norm_value(model: TheoryModel, delta: LinearMap,
                   certificate: StateVec) -> float:
    """Recompute the bound achieved by a given pure input certificate."""
    if model.theory == CLASSICAL:
        out = np.kron(delta.matrix, np.eye(certificate.system.coord_dim
                                           // delta.input.coord_dim)) @ certificate.coords
        return float(np.sum(np.abs(out)))
    anc_dims = certificate.system.dims[len(delta.input.dims):]
    anc = model.system(*anc_dims)
    lifted = model.lift_local(LinearMap(delta.input, delta.output, delta.matrix),
                              anc, where="left")
    joint_out = model.compose(delta.output, anc)
    theta = model.from_coords(joint_out, lifted.matrix @ certificate.coords)
    return float(np.sum(np.abs(np.linalg.eigvalsh(theta))))
