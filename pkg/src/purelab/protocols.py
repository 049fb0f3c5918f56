"""Teleportation-style protocols over the stored-transformation machinery.

The canonical entangled pair is the resource throughout; outcome labels
come from the discrete displacement unitaries. Corrections for the
deterministic scheme are recovered numerically from the contraction
branches, so agreement with the closed-form script builtins is a check
rather than an assumption.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from purelab.choi import (
    FaithfulPair,
    _factor_permuted,
    _retrieve_map,
    _scale_map,
    faithful_pair,
)
from purelab.circuits import Test
from purelab.purification import _coefficient_matrix, _minimal_kraus
from purelab.theories import (
    CLASSICAL,
    QUANTUM,
    EffectVec,
    LinearMap,
    StateVec,
    TheoryModel,
    UnsupportedOperation,
    weyl,
)


def _displacements(model: TheoryModel, d: int) -> list:
    """All d^2 displacement unitaries, identity first."""
    if d < 2:
        raise ValueError("need dimension at least 2")
    out = []
    for k in range(d * d):
        w = weyl(d, k % d, k // d)
        if getattr(model, "real_carrier", False):
            if np.max(np.abs(w.imag)) > 1e-12:
                raise UnsupportedOperation(
                    f"displacement {k} on dimension {d} has no real form")
            w = w.real
        out.append(w)
    return out


def _single_unitary(model: TheoryModel, m: LinearMap,
                    tol: float = 1e-8) -> np.ndarray:
    """The unitary operator of a reversible map; rejects anything else."""
    if m.kraus is not None and len(m.kraus) == 1:
        op = np.asarray(m.kraus[0])
    else:
        ops = _minimal_kraus(model, m)
        if len(ops) != 1:
            raise ValueError("map is not reversible: no single-operator form")
        op = ops[0]
    h = m.input.hilbert_dim
    if op.shape != (h, h) or \
            np.max(np.abs(np.conj(op).T @ op - np.eye(h))) > tol:
        raise ValueError("map is not reversible")
    return op


# ---------------------------------------------------------------------------
# twirling


@dataclass(frozen=True)
class TwirlTest:
    """A finite mixture of reversible maps averaging every input to the
    invariant state. The first map is always the identity."""

    model: TheoryModel
    probabilities: tuple
    maps: tuple                # reversible branches, maps[0] the identity
    channel: LinearMap         # the mixture
    residual: float            # mixture vs constant-to-invariant map

    def as_test(self) -> Test:
        return Test(self.model,
                    {k: _scale_map(m, p)
                     for k, (p, m) in enumerate(zip(self.probabilities,
                                                    self.maps))})


def pauli_twirl(model: TheoryModel, d: int) -> TwirlTest:
    """The displacement twirl: conjugate by each displacement unitary
    with equal weight. Classically the displacements collapse to the d
    cyclic shifts; the mixture sends every state to the uniform one.
    """
    system = model.system(d)
    if model.theory == CLASSICAL:
        maps = []
        for k in range(d):
            mat = np.zeros((d, d))
            mat[(np.arange(d) + k) % d, np.arange(d)] = 1.0
            maps.append(LinearMap(system, system, mat, tag="reversible"))
        probs = (1.0 / d,) * d
    else:
        maps = [model.unitary_channel(system, w)
                for w in _displacements(model, d)]
        probs = (1.0 / (d * d),) * (d * d)
    total = sum(p * m.matrix for p, m in zip(probs, maps))
    chi = model.invariant_state(system)
    unit = model.deterministic_effect(system)
    constant = np.outer(chi.coords, unit.coords)
    residual = float(np.max(np.abs(total - constant)))
    channel = LinearMap(system, system, total, tag="channel")
    return TwirlTest(model, probs, tuple(maps), channel, residual)


# ---------------------------------------------------------------------------
# the displaced entangled measurement


def bell_effects(model: TheoryModel, d: int) -> tuple:
    """The d^2 atomic effects projecting onto the displaced entangled
    vectors. Slot order is (incoming system, pair half)."""
    if model.theory == CLASSICAL:
        raise UnsupportedOperation(
            "the displaced entangled measurement needs a matrix model")
    joint = model.system(d, d)
    out = []
    for w in _displacements(model, d):
        vec = (w @ np.eye(d)).reshape(d * d) / np.sqrt(d)
        proj = np.outer(vec, np.conj(vec))
        out.append(EffectVec(joint, model.to_coords(joint, proj)))
    return tuple(out)


def bell_test(model: TheoryModel, d: int) -> Test:
    """The effects above as one observation test; they resolve the unit
    effect exactly because the displaced vectors form a basis."""
    return Test(model, dict(enumerate(bell_effects(model, d))))


# ---------------------------------------------------------------------------
# deterministic teleportation


@dataclass(frozen=True)
class TeleportationRun:
    """A full deterministic teleportation scheme with its certificates.

    branches hold the raw contraction maps (outcome weight included);
    corrections undo them. The three residual fields certify, in order:
    every corrected branch is the weighted identity, pairing each
    outcome effect with the invariant state leaves the weighted unit
    effect, and the weighted corrections average to the twirl.
    """

    model: TheoryModel
    pair: FaithfulPair
    effects: tuple
    branches: tuple
    corrections: tuple
    probabilities: tuple
    residuals: tuple
    effect_ranks: tuple
    invariant_residual: float
    twirl_residual: float

    def instrument(self, corrected: bool = False) -> Test:
        if corrected:
            branches = {k: c @ b
                        for k, (c, b) in enumerate(zip(self.corrections,
                                                       self.branches))}
        else:
            branches = dict(enumerate(self.branches))
        return Test(self.model, branches)


def deterministic_teleport(model: TheoryModel, d: int,
                           tol: float = 1e-10) -> TeleportationRun:
    """Teleport a d-level system through the canonical pair with the
    displaced entangled measurement, recovering each correction from
    the branch itself.

    Every branch map is contracted numerically, checked to be atomic
    with a reversible operator part, and inverted. No closed form for
    the corrections enters the construction.
    """
    system = model.system(d)
    fp = faithful_pair(model, system)
    effects = bell_effects(model, d)
    twirl = pauli_twirl(model, d)
    n_back = len(fp.purifying.dims)
    ident = np.eye(system.coord_dim)
    chi_mat = model.from_coords(system,
                                model.invariant_state(system).coords)

    branches, corrections, probs, resids, ranks = [], [], [], [], []
    inv_resid = 0.0
    for eff in effects:
        # the effect pairs (incoming, pair half); the contraction wants
        # the stored half first
        sw_sys, sw = _factor_permuted(model, eff.system, eff.coords, (1, 0))
        branch = _retrieve_map(model, fp.state, n_back,
                               EffectVec(sw_sys, sw))
        ops = _minimal_kraus(model, branch)
        if len(ops) != 1:
            raise AssertionError("teleportation branch is not atomic")
        k_op = ops[0]
        p = float(np.real(np.trace(np.conj(k_op).T @ k_op))) / d
        v = k_op / np.sqrt(p)
        if np.max(np.abs(np.conj(v).T @ v - np.eye(d))) > 1e-8:
            raise AssertionError("branch operator part is not reversible")
        corr = model.unitary_channel(system, np.conj(v).T)
        resid = float(np.max(np.abs((corr @ branch).matrix - p * ident)))

        e4 = model.from_coords(eff.system, eff.coords).reshape(d, d, d, d)
        part = np.einsum("xayb,ba->xy", e4, chi_mat)
        inv_resid = max(inv_resid,
                        float(np.max(np.abs(part - p * np.eye(d)))))

        vals = np.linalg.eigvalsh(model.from_coords(eff.system, eff.coords))
        ranks.append(int(np.sum(vals > 1e-9 * max(1.0, vals[-1]))))
        branches.append(branch)
        corrections.append(corr)
        probs.append(p)
        resids.append(resid)

    mixture = sum(p * c.matrix for p, c in zip(probs, corrections))
    twirl_resid = float(np.max(np.abs(mixture - twirl.channel.matrix)))
    run = TeleportationRun(model, fp, effects, tuple(branches),
                           tuple(corrections), tuple(probs), tuple(resids),
                           tuple(ranks), inv_resid, twirl_resid)
    worst = max(resids)
    if worst > tol:
        raise AssertionError(
            f"corrected branch misses the identity by {worst:.3e}")
    return run


def dense_coding_table(model: TheoryModel, d: int) -> np.ndarray:
    """Pairing values between the d^2 locally displaced pair states and
    the displaced entangled measurement: the identity matrix, so d^2
    messages ride on one d-level carrier."""
    fp = faithful_pair(model, model.system(d))
    effects = bell_effects(model, d)
    maps = pauli_twirl(model, d).maps
    table = np.zeros((len(effects), len(maps)))
    for j, m in enumerate(maps):
        encoded = model.lift_local(m, fp.purifying, where="left").apply(
            fp.state)
        for i, eff in enumerate(effects):
            table[i, j] = eff.pair(encoded)
    return table


# ---------------------------------------------------------------------------
# entanglement swapping


@dataclass(frozen=True)
class SwapResult:
    effect: EffectVec          # atomic, on (second half, first half)
    probability: float
    swapped: StateVec          # outer-wire state after the effect fires
    residual: float            # swapped vs probability * resource


def entanglement_swap(model: TheoryModel, psi: StateVec,
                      fp: Optional[FaithfulPair] = None, split: int = 1,
                      tol: float = 1e-10) -> SwapResult:
    """The effect that swaps entanglement across two copies of a pure
    bipartite state: firing it on the inner wires of the double copy
    leaves the resource state on the outer wires.

    The effect projects onto the conjugated pseudo-inverse of the
    amplitude matrix, so it exists for every pure resource; the success
    weight is set by the inverse singular values.
    """
    dims = psi.system.dims
    if not 0 < split < len(dims):
        raise ValueError("both halves need at least one factor")
    if fp is not None and (dims[:split] != fp.system.dims
                           or dims[split:] != fp.purifying.dims):
        raise ValueError("resource state does not live on the pair systems")
    if not model.is_pure(psi, tol=1e-9):
        raise ValueError("the swap effect needs a pure resource state")
    unit = model.deterministic_effect(psi.system)
    if abs(unit.pair(psi) - 1.0) > 1e-9:
        raise ValueError("the resource state must be normalized")

    m = _coefficient_matrix(model, psi, split)
    if getattr(model, "real_carrier", False):
        m = np.real_if_close(m, tol=1000)
    pinv = np.linalg.pinv(m)
    scale = float(np.linalg.norm(pinv))
    f = np.conj(pinv) / scale
    a_sys = model.system(*dims[:split])
    b_sys = model.system(*dims[split:])
    inner = model.compose(b_sys, a_sys)
    vec = f.reshape(-1)
    effect = EffectVec(inner, model.to_coords(inner, np.outer(vec,
                                                              np.conj(vec))))
    p_pred = 1.0 / (scale * scale)

    # teleport the first half of the second copy through the first copy
    rmap = _retrieve_map(model, psi, len(dims) - split, effect)
    swapped = model.lift_local(rmap, b_sys, where="left").apply(psi)
    p = unit.pair(swapped)
    if abs(p - p_pred) > 1e-9:
        raise AssertionError(
            f"measured weight {p:.6e} disagrees with the singular values")
    residual = float(np.max(np.abs(swapped.coords - p_pred * psi.coords)))
    if residual > tol:
        raise AssertionError(
            f"swapped state is not proportional to the resource: {residual:.3e}")
    rank = int(np.linalg.matrix_rank(m, tol=1e-10))
    h_a, h_b = m.shape
    if rank == h_a == h_b and p > 1.0 / a_sys.coord_dim + 1e-12:
        raise AssertionError("swap weight exceeds the dimension bound")
    return SwapResult(effect, float(p), swapped, residual)


# ---------------------------------------------------------------------------
# transposition and conjugation across the pair


def mirror_defect(model: TheoryModel, on_system: LinearMap,
                  on_mirror: LinearMap, fp: FaithfulPair) -> float:
    """How far acting on one half of the pair is from acting on the
    other: zero exactly when the two maps are mirror partners."""
    a = model.lift_local(on_system, fp.purifying, where="left").apply(fp.state)
    b = model.lift_local(on_mirror, fp.system, where="right").apply(fp.state)
    return float(np.max(np.abs(a.coords - b.coords)))


def transpose_reversible(model: TheoryModel, u: LinearMap, fp: FaithfulPair,
                         tol: float = 1e-11) -> LinearMap:
    """The mirror partner of a reversible map: acting with it on the
    pair's second half equals acting with the original on the first."""
    op = _single_unitary(model, u)
    out = model.unitary_channel(fp.purifying, op.T)
    defect = mirror_defect(model, u, out, fp)
    if defect > tol:
        raise AssertionError(f"mirror identity fails by {defect:.3e}")
    return out


def conjugate_reversible(model: TheoryModel, u: LinearMap, fp: FaithfulPair,
                         tol: float = 1e-11) -> LinearMap:
    """The inverse of the mirror partner: applying the original on one
    half and this on the other fixes the pair state."""
    op = _single_unitary(model, u)
    out = model.unitary_channel(fp.purifying, np.conj(op))
    held = model.lift_local(out, fp.system, where="right").apply(
        model.lift_local(u, fp.purifying, where="left").apply(fp.state))
    defect = float(np.max(np.abs(held.coords - fp.state.coords)))
    if defect > tol:
        raise AssertionError(f"pair state moves by {defect:.3e}")
    return out


# ---------------------------------------------------------------------------
# programming reversible maps into states


@dataclass(frozen=True)
class ProgrammingReport:
    """Outcome of trying to run a family of reversible maps off program
    states with one fixed retriever."""

    exact: bool
    retriever: LinearMap       # channel on work (x) program system
    fidelity: float            # mean channel fidelity over the family
    deficit: float
    restarts: int


def _mean_program_fidelity(g: np.ndarray, ops: Sequence[np.ndarray],
                           vecs: Sequence[np.ndarray]) -> float:
    h_w = ops[0].shape[0]
    h_p = len(vecs[0])
    g4 = g.reshape(h_w, h_p, h_w, h_p)
    total = 0.0
    for op, v in zip(ops, vecs):
        ks = np.einsum("xeyp,p->exy", g4, v)
        total += sum(abs(np.vdot(op, k)) ** 2 for k in ks) / (h_w * h_w)
    return float(total / len(ops))


def programming_demo(model: TheoryModel, unitaries: Sequence[LinearMap],
                     programs: Sequence[StateVec], rng=None,
                     restarts: int = 50) -> ProgrammingReport:
    """Try to realize every map in the family by one fixed interaction
    with its own program state.

    Mutually orthogonal programs admit the exact controlled retriever.
    Otherwise no retriever is exact; a polar-update search reports the
    best mean fidelity found and the (strictly positive) deficit.
    """
    if model.theory != QUANTUM:
        raise UnsupportedOperation(
            "the programming demo runs on the complex matrix model")
    if not unitaries or len(unitaries) != len(programs):
        raise ValueError("one program state per reversible map")
    work = unitaries[0].input
    prog = programs[0].system
    ops = []
    for u in unitaries:
        if u.input != work or u.output != work:
            raise ValueError("the maps must share one system")
        ops.append(_single_unitary(model, u))
    vecs, projs = [], []
    for s in programs:
        if s.system != prog:
            raise ValueError("program states must share one system")
        mat = model.from_coords(prog, s.coords)
        vals, evecs = np.linalg.eigh(mat)
        if abs(vals[-1] - 1.0) > 1e-9 or np.max(np.abs(vals[:-1])) > 1e-9:
            raise ValueError("program states must be normalized and pure")
        vecs.append(evecs[:, -1])
        projs.append(mat)
    h_w, h_p = work.hilbert_dim, prog.hilbert_dim
    joint = model.compose(work, prog)

    overlap = 0.0
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            overlap = max(overlap, abs(np.vdot(vecs[i], vecs[j])))
    if overlap <= 1e-9:
        g = sum(np.kron(op, pj) for op, pj in zip(ops, projs))
        g = g + np.kron(np.eye(h_w), np.eye(h_p) - sum(projs))
        retr = model.unitary_channel(joint, g)
        fid = _mean_program_fidelity(g, ops, vecs)
        return ProgrammingReport(True, retr, fid, max(0.0, 1.0 - fid), 0)

    rng = rng if rng is not None else np.random.default_rng(0)
    targets = []
    for op, v in zip(ops, vecs):
        for e in range(h_p):
            targets.append(np.kron(op, np.outer(np.eye(h_p)[e], np.conj(v))))
    best_g, best_f = None, -1.0
    for _ in range(restarts):
        g = model._random_unitary(h_w * h_p, rng)
        for _ in range(200):
            m = sum(np.vdot(a, g) * a for a in targets)
            u_l, _, v_r = np.linalg.svd(m)
            nxt = u_l @ v_r
            step = float(np.max(np.abs(nxt - g)))
            g = nxt
            if step < 1e-12:
                break
        f = _mean_program_fidelity(g, ops, vecs)
        if f > best_f:
            best_f, best_g = f, g
    retr = model.unitary_channel(joint, best_g)
    return ProgrammingReport(False, retr, best_f, 1.0 - best_f, restarts)
