"""Exact correction of noise restricted to a chosen input state.

A code is carried by the support of its input state; correctability is
decided twice, by the operator block criterion on the Kraus list and by
asking whether the purified environment decouples from the reference.
The two verdicts must agree.  When they pass, the recovery channel is
built from the block data and certified end to end.
"""

import json
import pathlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from purelab.purification import (
    Purification,
    _minimal_kraus,
    complementary_channel,
    equal_upon_input,
    purify,
)
from purelab.serialize import (
    _decode_complex,
    _decode_system,
    _encode_complex,
    _encode_system,
    canonical_json,
)
from purelab.theories import (
    CLASSICAL,
    QUANTUM,
    REAL_QUANTUM,
    LinearMap,
    StateVec,
    TheoryModel,
    UnsupportedOperation,
    check_channel,
    get_model,
)

RANK_FLOOR = 1e-10


def _support_projector(mat: np.ndarray, floor: float = RANK_FLOOR):
    """Projector onto the eigenspaces above the floor, plus an
    orthonormal basis of that support as columns."""
    vals, vecs = np.linalg.eigh(mat)
    keep = vals > floor
    basis = vecs[:, keep]
    return basis @ np.conj(basis).T, basis


@dataclass(frozen=True)
class CodeSpec:
    """Input state, noise channel, and the derived support data."""

    model: TheoryModel
    state: StateVec
    channel: LinearMap
    projector: np.ndarray
    code_basis: np.ndarray
    reference: Purification


def code_spec(model: TheoryModel, state: StateVec, channel: LinearMap,
              tol: float = 1e-8) -> CodeSpec:
    if model.theory == CLASSICAL:
        raise UnsupportedOperation(
            "code analysis needs a matrix model; classical noise has no "
            "Kraus presentation here")
    if channel.input != state.system:
        raise ValueError("noise channel does not act on the state's system")
    if channel.kraus is None:
        raise ValueError("noise channel needs an explicit Kraus list")
    h_in = channel.input.hilbert_dim
    h_out = channel.output.hilbert_dim
    for k in channel.kraus:
        if np.asarray(k).shape != (h_out, h_in):
            raise ValueError("malformed Kraus list: operator shape does not "
                             "match the channel's systems")
    if check_channel(channel, model, tol=tol).kind != "channel":
        raise ValueError("noise must be a deterministic channel")
    rho = model.from_coords(state.system, state.coords)
    proj, basis = _support_projector(rho)
    if model.real_carrier:
        proj, basis = np.real(proj), np.real(basis)
    reference = purify(model, state)
    return CodeSpec(model, state, channel, proj, basis, reference)


def _block_data(spec: CodeSpec):
    """Compressed products lambda_ij = tr(P K_i^† K_j P)/tr(P), the worst
    deviation of a compressed product from lambda_ij P, and its index."""
    kraus = spec.channel.kraus
    p = spec.projector
    tr_p = float(np.real(np.trace(p)))
    n = len(kraus)
    lam = np.zeros((n, n), dtype=float if spec.model.real_carrier else complex)
    worst, witness = 0.0, (0, 0)
    for i in range(n):
        for j in range(n):
            block = p @ np.conj(kraus[i]).T @ kraus[j] @ p
            lam[i, j] = np.trace(block) / tr_p
            gap = float(np.max(np.abs(block - lam[i, j] * p)))
            if gap > worst:
                worst, witness = gap, (i, j)
    return lam, worst, witness


def _environment_split(spec: CodeSpec):
    """Feed the purified input through the complement of the noise and
    measure how far the result sits from (environment) x (reference)."""
    model, ref = spec.model, spec.reference
    comp = complementary_channel(model, spec.channel)
    joint = model.lift_local(comp, ref.purifying, where="left").apply(
        ref.pure_state)
    n_env = len(comp.output.dims)
    n_ref = len(ref.purifying.dims)
    env = model.marginal(joint, range(n_env))
    refm = model.marginal(joint, range(n_env, n_env + n_ref))
    product = model.embed_product(env, refm)
    gap = float(np.max(np.abs(joint.coords - product.coords)))
    return gap, env, refm


def _standard_recovery(spec: CodeSpec, lam: np.ndarray) -> LinearMap:
    """Recovery from the block data: rotate the Kraus list so the blocks
    become orthogonal, undo each surviving branch isometrically, and dump
    everything outside their ranges onto a fixed codeword."""
    model = spec.model
    kraus = spec.channel.kraus
    vals, rot = np.linalg.eigh(lam)
    h_out = spec.channel.output.hilbert_dim
    rec = []
    range_sum = np.zeros((h_out, h_out),
                         dtype=float if model.real_carrier else complex)
    for k in range(len(kraus)):
        if vals[k] <= RANK_FLOOR:
            continue
        e_k = sum(rot[i, k] * kraus[i] for i in range(len(kraus)))
        w = e_k @ spec.projector / np.sqrt(vals[k])
        rec.append(np.conj(w).T)
        range_sum = range_sum + w @ np.conj(w).T
    # Anything the noise cannot reach is routed to one codeword so the
    # recovery stays deterministic.
    left_vals, left_vecs = np.linalg.eigh(np.eye(h_out) - range_sum)
    v0 = spec.code_basis[:, 0]
    for idx in range(h_out):
        if left_vals[idx] > 0.5:
            rec.append(np.outer(v0, np.conj(left_vecs[:, idx])))
    return model.map_from_kraus(spec.channel.output, spec.channel.input,
                                rec, tag="channel")


@dataclass(frozen=True)
class CorrectionReport:
    correctable: bool
    block_residual: float
    split_residual: float
    recovery: Optional[LinearMap]
    recovery_residual: Optional[float]
    witness: Optional[Tuple[int, int]]


def is_correctable(spec: CodeSpec, tol: float = 1e-8) -> CorrectionReport:
    """Decide exact correctability of the noise upon the code state.

    Both routes must return the same verdict; a recovery is constructed
    and certified only on success, and on failure the offending Kraus
    pair is reported.
    """
    lam, block_resid, witness = _block_data(spec)
    split_resid, _, _ = _environment_split(spec)
    blocks_ok = block_resid <= tol
    split_ok = split_resid <= tol
    if blocks_ok != split_ok:
        raise AssertionError(
            f"correctability criteria disagree: block residual "
            f"{block_resid:.3e} against split residual {split_resid:.3e}")
    if not blocks_ok:
        return CorrectionReport(False, block_resid, split_resid,
                                None, None, witness)
    model = spec.model
    recovery = _standard_recovery(spec, lam)
    round_trip = recovery @ spec.channel
    ref = spec.reference
    healed = model.lift_local(round_trip, ref.purifying, where="left").apply(
        ref.pure_state)
    recovery_resid = float(np.max(np.abs(healed.coords
                                         - ref.pure_state.coords)))
    ident = model.identity_map(spec.channel.input)
    if not equal_upon_input(model, round_trip, ident, spec.state,
                            tol=max(tol, 1e-9)):
        raise AssertionError("recovery failed to act as the identity on "
                             "the code state")
    if recovery_resid > tol:
        raise AssertionError(
            f"recovery residual {recovery_resid:.3e} exceeds {tol:.1e}")
    return CorrectionReport(True, block_resid, split_resid,
                            recovery, recovery_resid, None)


@dataclass(frozen=True)
class DeletionReport:
    deletion: bool
    fixed_point: Optional[StateVec]
    residual: float


def is_deletion(model: TheoryModel, channel: LinearMap, state: StateVec,
                tol: float = 1e-9) -> DeletionReport:
    """Does the channel send every input supported on the state to one
    fixed output?  Checked over a spanning set of the support."""
    if channel.input != state.system:
        raise ValueError("channel does not act on the state's system")
    out = channel.apply(state)
    if model.theory == CLASSICAL:
        support = np.flatnonzero(state.coords > RANK_FLOOR)
        cols = channel.matrix[:, support]
        sigma = cols[:, 0] / np.sum(cols[:, 0])
        resid = float(np.max(np.abs(cols - sigma[:, None])))
        return DeletionReport(resid <= tol, StateVec(channel.output, sigma),
                              resid)
    rho = model.from_coords(state.system, state.coords)
    proj, _ = _support_projector(rho)
    resid = 0.0
    for k in range(state.system.coord_dim):
        unit = np.zeros(state.system.coord_dim)
        unit[k] = 1.0
        tau = proj @ model.from_coords(state.system, unit) @ proj
        weight = float(np.real(np.trace(tau)))
        image = channel.matrix @ model.to_coords(state.system, tau)
        resid = max(resid, float(np.max(np.abs(image
                                               - weight * out.coords))))
    return DeletionReport(resid <= tol, out, resid)


@dataclass(frozen=True)
class ComplementarityReport:
    correctable: bool
    complement_deletes: bool
    consistent: bool
    direction: str
    correction: CorrectionReport
    deletion: DeletionReport


def complementarity_check(model: TheoryModel, channel: LinearMap,
                          state: StateVec, tol: float = 1e-8,
                          ) -> ComplementarityReport:
    """Correctable noise always has a complement that deletes the code.
    On the complex matrix model the converse holds too, so the verdicts
    are required to coincide there; on the real model only the forward
    direction is enforced.
    """
    spec = code_spec(model, state, channel, tol=tol)
    correction = is_correctable(spec, tol=tol)
    comp = complementary_channel(model, channel)
    deletion = is_deletion(model, comp, state, tol=max(tol, 1e-9))
    if model.theory == QUANTUM:
        direction = "both"
        consistent = correction.correctable == deletion.deletion
    else:
        direction = "forward"
        consistent = (not correction.correctable) or deletion.deletion
    if correction.correctable and not deletion.deletion:
        raise AssertionError("corrected noise must hide the code from its "
                             "environment")
    return ComplementarityReport(correction.correctable, deletion.deletion,
                                 consistent, direction, correction, deletion)


@dataclass(frozen=True)
class CounterexampleReport:
    model: TheoryModel
    channel: LinearMap
    complement: LinearMap
    isometry_residual: float
    deletion_direct: DeletionReport
    deletion_complement: DeletionReport
    fixed_point_gap: float
    correction: CorrectionReport
    verdict: str


def real_quantum_counterexample(tol: float = 1e-12) -> CounterexampleReport:
    """A real two-level channel whose complement deletes the maximally
    mixed input even though the noise itself is not correctable.

    The isometry sends the two real basis vectors to the two real Bell
    vectors; tracing out either output side lands on the invariant state
    for every real input, yet the branch operators fail the block test.
    """
    model = get_model(REAL_QUANTUM)
    system = model.system(2)
    iso = np.zeros((4, 2))
    iso[:, 0] = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0)
    iso[:, 1] = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)
    iso_resid = float(np.max(np.abs(iso.T @ iso - np.eye(2))))
    cube = iso.reshape(2, 2, 2)
    keep_first = tuple(cube[:, e, :] for e in range(2))
    channel = model.map_from_kraus(system, system, keep_first, tag="channel")
    complement = complementary_channel(model, channel)
    mixed = model.invariant_state(system)

    deletion_direct = is_deletion(model, channel, mixed, tol=tol)
    deletion_complement = is_deletion(model, complement, mixed, tol=tol)
    gap = 0.0
    for report in (deletion_direct, deletion_complement):
        gap = max(gap, float(np.max(np.abs(report.fixed_point.coords
                                           - mixed.coords))))
    correction = is_correctable(code_spec(model, mixed, channel))
    converse_fails = (deletion_direct.deletion
                      and deletion_complement.deletion
                      and not correction.correctable)
    return CounterexampleReport(
        model, channel, complement, iso_resid, deletion_direct,
        deletion_complement, gap, correction,
        "converse-fails" if converse_fails else "consistent")


@dataclass(frozen=True)
class OneWayReport:
    status: str  # "recovered" | "not-one-way-correctable" | "inconclusive"
    probabilities: Tuple[float, ...]
    unitaries: Tuple[np.ndarray, ...]
    recoveries: Tuple[LinearMap, ...]
    witness: dict
    trials: int


def _reversible_split(model: TheoryModel, kraus, h: int, tol: float):
    """Try to read each operator as sqrt(probability) times a unitary."""
    probs, units = [], []
    for k in kraus:
        q = float(np.real(np.trace(np.conj(k).T @ k))) / h
        if q <= RANK_FLOOR:
            continue
        gap = float(np.max(np.abs(np.conj(k).T @ k - q * np.eye(h))))
        if gap > tol * max(q, 1.0):
            return None
        probs.append(q)
        units.append(k / np.sqrt(q))
    return tuple(probs), tuple(units)


def one_way_correct(model: TheoryModel, channel: LinearMap, state: StateVec,
                    budget: int = 200, seed: int = 0, tol: float = 1e-8,
                    ) -> OneWayReport:
    """Look for a presentation of the noise as a random reversible map,
    which makes every branch correctable by inverting its unitary.

    The search over Kraus remixes is bounded, so only the structural
    tests decide: a detected mixture is a positive answer, an output
    drift of the invariant state is a negative one, and an exhausted
    budget is reported as inconclusive rather than as a failure.
    """
    if model.theory != QUANTUM:
        raise UnsupportedOperation(
            "the random-reversible analysis runs on the complex matrix "
            "model")
    if channel.input != channel.output:
        raise ValueError("mixture analysis needs matching input and output "
                         "systems")
    rho = model.from_coords(state.system, state.coords)
    if float(np.min(np.linalg.eigvalsh(rho))) < RANK_FLOOR:
        raise UnsupportedOperation("the input state must have full support")
    h = channel.input.hilbert_dim
    mixed_in = model.to_coords(channel.input, np.eye(h))
    drift = model.from_coords(channel.output,
                              channel.matrix @ mixed_in) - np.eye(h)
    unital_gap = float(np.max(np.abs(drift)))
    kraus = _minimal_kraus(model, channel)
    spreads = []
    for k in kraus:
        sv = np.linalg.svd(k, compute_uv=False)
        spreads.append(float(sv[0] - sv[-1]))
    witness = {"unital_gap": unital_gap,
               "singular_spreads": tuple(spreads)}
    if unital_gap > tol:
        # A mixture of reversibles fixes the invariant state, so any
        # drift rules the decomposition out completely.
        return OneWayReport("not-one-way-correctable", (), (), (),
                            witness, 0)

    rng = np.random.default_rng(seed)
    trials = 0
    split = _reversible_split(model, kraus, h, tol)
    while split is None and trials < budget:
        trials += 1
        remix = model._random_unitary(len(kraus), rng)
        mixed = [sum(remix[i, j] * kraus[j] for j in range(len(kraus)))
                 for i in range(len(kraus))]
        split = _reversible_split(model, mixed, h, tol)
    if split is None:
        return OneWayReport("inconclusive", (), (), (), witness, trials)
    probs, units = split
    rebuilt = model.map_from_kraus(
        channel.input, channel.output,
        tuple(np.sqrt(q) * u for q, u in zip(probs, units)), tag="channel")
    rebuild_gap = float(np.max(np.abs(rebuilt.matrix - channel.matrix)))
    if rebuild_gap > max(tol, 1e-8):
        raise AssertionError(
            f"recovered mixture rebuilds the channel only to {rebuild_gap:.3e}")
    recoveries = tuple(model.unitary_channel(channel.output, np.conj(u).T)
                       for u in units)
    return OneWayReport("recovered", probs, units, recoveries, witness,
                        trials)


def code_doc(spec: CodeSpec) -> dict:
    if spec.channel.input != spec.channel.output:
        raise ValueError("only noise on a single system serializes; the "
                         "document stores one system label")
    return {
        "kind": "code",
        "system": _encode_system(spec.state.system),
        "projector": _encode_complex(spec.projector),
        "kraus": [_encode_complex(np.asarray(k)) for k in spec.channel.kraus],
    }


def save_code(spec: CodeSpec, path) -> None:
    pathlib.Path(path).write_text(canonical_json(code_doc(spec)))


def load_code(model: TheoryModel, path) -> CodeSpec:
    """Rebuild a code from its stored projector and Kraus list; the code
    state is the normalized projector."""
    doc = json.loads(pathlib.Path(path).read_text())
    if doc.get("kind") != "code":
        raise ValueError("document does not describe a code")
    system = _decode_system(doc["system"])
    if system.theory != model.theory:
        raise ValueError("document was written for a different theory")
    proj = _decode_complex(doc["projector"])
    kraus = [_decode_complex(k) for k in doc["kraus"]]
    if model.real_carrier:
        proj = np.real(proj)
        kraus = [np.real(k) for k in kraus]
    h = system.hilbert_dim
    for k in kraus:
        if k.shape != (h, h):
            raise ValueError("stored Kraus operators do not fit the system")
    state = StateVec(system, model.to_coords(system, proj / np.trace(proj)))
    channel = model.map_from_kraus(system, system, kraus, tag="channel")
    return code_spec(model, state, channel)
