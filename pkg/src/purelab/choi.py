"""States-transformations correspondence, link composition, and combs.

A faithful pair is a fixed entangled state plus a teleportation effect:
applying a transformation to one half of the state stores it as a
bipartite state, and contracting with the effect plays it back at the
pair's teleportation probability. On top of that sit the link product,
entanglement-breaking classification, and the decomposition of causally
ordered multi-slot channels into memory chains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from purelab.circuits import Box, Circuit, effect_as_map, evaluate, state_as_map
from purelab.purification import Dilation, connect_dilations, stinespring
from purelab.serialize import canonical_json
from purelab.theories import (
    CLASSICAL,
    DEFAULT_TOL,
    QUANTUM,
    EffectVec,
    LinearMap,
    StateVec,
    SystemLabel,
    TheoryModel,
    UnsupportedOperation,
    check_channel,
)


class NotAChoiState(Exception):
    """The vector fails the marginal dominance condition; carries the gap."""

    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


class CombOrderError(Exception):
    """Causal-order violation at a cut; carries the cut index."""

    def __init__(self, message: str, cut: int, residual: float):
        super().__init__(message)
        self.cut = cut
        self.residual = residual


# ---------------------------------------------------------------------------
# faithful pairs


@dataclass(frozen=True)
class FaithfulPair:
    """An entangled state and effect implementing store-and-playback."""

    system: SystemLabel         # A
    purifying: SystemLabel      # mirror of A
    state: StateVec             # pure, on A (x) mirror
    tele_effect: EffectVec      # on mirror (x) A
    probability: float          # playback succeeds with this weight
    identity_residual: float    # playback-of-nothing vs scaled identity


def faithful_pair(model: TheoryModel, system: SystemLabel) -> FaithfulPair:
    """The canonical faithful pair: the uniform-superposition entangled
    state (purifying the invariant state) with its projector effect."""
    if model.theory == CLASSICAL:
        raise UnsupportedOperation(
            "classical theory has no entangled pure states, so no faithful "
            "pair exists")
    mirror = model.system(*system.dims)
    h = system.hilbert_dim
    vec = np.eye(h).reshape(-1) / np.sqrt(h)
    joint = model.compose(system, mirror)
    psi = model.pure_state(joint, vec)
    back = model.compose(mirror, system)
    proj = np.outer(vec, vec)
    eff = EffectVec(back, model.to_coords(back, proj))
    played = _retrieve_map(model, psi, len(mirror.dims), eff)
    d = system.coord_dim
    p = float(np.real(np.trace(played.matrix))) / d
    resid = float(np.max(np.abs(played.matrix - p * np.eye(d))))
    if p > 1.0 / d + 1e-12:
        raise AssertionError("playback weight exceeds the dimension bound")
    return FaithfulPair(system, mirror, psi, eff, p, resid)


def _factor_permuted(model: TheoryModel, system: SystemLabel,
                     coords: np.ndarray, perm: Sequence[int]):
    """Reorder tensor factors of a state/effect coordinate vector."""
    dims = system.dims
    n = len(dims)
    m = model.from_coords(system, coords)
    r = m.reshape(dims + dims)
    axes = tuple(perm) + tuple(n + p for p in perm)
    out_sys = model.system(*[dims[p] for p in perm])
    h = out_sys.hilbert_dim
    return out_sys, model.to_coords(out_sys, r.transpose(axes).reshape(h, h))


def _retrieve_map(model: TheoryModel, stored: StateVec, n_back: int,
                  effect: EffectVec) -> LinearMap:
    """Contract: prepare `stored` on (front, back), feed (back, fresh
    input) to the effect, leave the front factors as output."""
    dims = stored.system.dims
    n_front = len(dims) - n_back
    in_dims = effect.system.dims[n_back:]
    front = tuple(range(n_front))
    backw = tuple(range(n_front, n_front + n_back))
    fresh = tuple(range(n_front + n_back, n_front + n_back + len(in_dims)))
    wire_dims = {w: d for w, d in zip(front + backw, dims)}
    wire_dims.update({w: d for w, d in zip(fresh, in_dims)})
    # payload factors are pre-rotated so the running contraction always
    # consumes a prefix of the frontier; a wire-level permutation on the
    # six-factor joint system would dwarf everything else at composite sizes
    st_sys, st_coords = _factor_permuted(
        model, stored.system, stored.coords,
        tuple(range(n_front, len(dims))) + tuple(range(n_front)))
    ef_sys, ef_coords = _factor_permuted(
        model, effect.system, effect.coords,
        tuple(range(n_back, n_back + len(in_dims))) + tuple(range(n_back)))
    boxes = (Box("stored", "prep",
                 state_as_map(model, StateVec(st_sys, st_coords)), (),
                 backw + front),
             Box("readout", "effect",
                 effect_as_map(model, EffectVec(ef_sys, ef_coords)),
                 fresh + backw, ()))
    circ = Circuit(model, boxes, wire_dims, fresh, front)
    return evaluate(circ)


def _scale_map(m: LinearMap, factor: float) -> LinearMap:
    kraus = None
    if m.kraus is not None:
        kraus = tuple(np.sqrt(factor) * k for k in m.kraus)
    return LinearMap(m.input, m.output, factor * m.matrix,
                     tag="transformation", kraus=kraus)


# ---------------------------------------------------------------------------
# store / retrieve


@dataclass(frozen=True)
class ChoiState:
    """A transformation stored as a bipartite state over the pair."""

    state: StateVec             # on output (x) mirror
    pair: FaithfulPair
    back_marginal: StateVec     # marginal on the mirror factor
    marginal_gap: float         # distance from the pair's own marginal


def store(model: TheoryModel, m: LinearMap, fp: FaithfulPair) -> ChoiState:
    """Apply the transformation to the first half of the faithful state."""
    if m.input != fp.system:
        raise ValueError("transformation input does not match the pair")
    lifted = model.lift_local(m, fp.purifying, where="left")
    r = lifted.apply(fp.state)
    n_out = len(m.output.dims)
    n_t = len(fp.purifying.dims)
    marg = model.marginal(r, range(n_out, n_out + n_t))
    ref = model.marginal(fp.state, range(len(fp.system.dims),
                                         len(fp.system.dims) + n_t))
    gap = float(np.max(np.abs(marg.coords - ref.coords)))
    return ChoiState(r, fp, marg, gap)


def retrieve(model: TheoryModel, r, fp: Optional[FaithfulPair] = None,
             tol: float = DEFAULT_TOL) -> LinearMap:
    """Play a stored transformation back by teleportation contraction.

    The stored state must obey the dominance condition: its marginal on
    the mirror factor may not exceed the pair's own marginal.
    """
    if isinstance(r, ChoiState):
        fp = fp or r.pair
        r = r.state
    if fp is None:
        raise ValueError("retrieve needs the faithful pair")
    n_t = len(fp.purifying.dims)
    n_out = len(r.system.dims) - n_t
    if r.system.dims[n_out:] != fp.purifying.dims:
        raise NotAChoiState("stored state does not end in the mirror factor",
                            float("inf"))
    marg = model.marginal(r, range(n_out, n_out + n_t))
    ref = model.marginal(fp.state, range(len(fp.system.dims),
                                         len(fp.system.dims) + n_t))
    diff = (model.from_coords(fp.purifying, ref.coords)
            - model.from_coords(fp.purifying, marg.coords))
    low = float(np.min(np.linalg.eigvalsh(diff)))
    if low < -tol:
        raise NotAChoiState(
            f"mirror marginal exceeds the invariant one by {-low:.3e}", -low)
    raw = _retrieve_map(model, r, n_t, fp.tele_effect)
    out = _scale_map(raw, 1.0 / fp.probability)
    kind = check_channel(out, model, tol=max(tol, 1e-8)).kind
    if kind in ("channel", "transformation"):
        out = LinearMap(out.input, out.output, out.matrix, tag=kind,
                        kraus=out.kraus)
    return out


def link(model: TheoryModel, r1: StateVec, r2: StateVec,
         fp: Optional[FaithfulPair] = None) -> StateVec:
    """Compose two stored transformations without retrieving them.

    r1 stores C: A -> B on B (x) mirror-of-A; r2 stores D: B -> C on
    C (x) mirror-of-B. The result stores D after C on C (x) mirror-of-A.
    With no pair given the states share nothing and the link is their
    product.
    """
    if fp is None:
        return model.embed_product(r2, r1)
    n_b = len(fp.system.dims)
    if r1.system.dims[:n_b] != fp.system.dims:
        raise ValueError("first state does not start with the shared system")
    if r2.system.dims[len(r2.system.dims) - n_b:] != fp.purifying.dims:
        raise ValueError("second state does not end in the shared mirror")
    own2 = r2.system.dims[:len(r2.system.dims) - n_b]
    own1 = r1.system.dims[n_b:]
    w_own2 = tuple(range(len(own2)))
    w_copy = tuple(range(len(own2), len(own2) + n_b))
    w_b = tuple(range(len(own2) + n_b, len(own2) + 2 * n_b))
    w_own1 = tuple(range(len(own2) + 2 * n_b,
                         len(own2) + 2 * n_b + len(own1)))
    wire_dims = {}
    for w, d in zip(w_own2 + w_copy, r2.system.dims):
        wire_dims[w] = d
    for w, d in zip(w_b + w_own1, r1.system.dims):
        wire_dims[w] = d
    boxes = (Box("second", "prep", state_as_map(model, r2), (),
                 w_own2 + w_copy),
             Box("first", "prep", state_as_map(model, r1), (),
                 w_b + w_own1),
             Box("glue", "effect", effect_as_map(model, fp.tele_effect),
                 w_copy + w_b, ()))
    circ = Circuit(model, boxes, wire_dims, (), w_own2 + w_own1)
    out = evaluate(circ)
    return StateVec(out.system, out.coords / fp.probability)


# ---------------------------------------------------------------------------
# entanglement breaking


@dataclass(frozen=True)
class EBReport:
    verdict: str                # "EB" | "not-EB" | "inconclusive"
    method: str
    evidence: object            # eigenvalue, or (povm, states) form


def measure_prepare_map(model: TheoryModel, povm: Sequence[EffectVec],
                        states: Sequence[StateVec]) -> LinearMap:
    """The channel: measure the povm, prepare the matching state."""
    if len(povm) != len(states):
        raise ValueError("one prepared state per povm outcome")
    mat = sum(np.outer(s.coords, e.coords) for e, s in zip(povm, states))
    return LinearMap(povm[0].system, states[0].system, mat, tag="channel")


def is_entanglement_breaking(model: TheoryModel, channel: LinearMap,
                             method: str = "ppt",
                             mp_form: Optional[tuple] = None,
                             tol: float = 1e-10) -> EBReport:
    """Classify a channel: does applying it to half of any entangled
    state always leave a separable state?

    method="ppt" transposes half of the stored state; a negative
    eigenvalue refutes, and positivity confirms only in the small
    dimensions where the criterion is exact. method="mp-witness"
    certifies by a measure-and-prepare form, either supplied or read off
    a stored state diagonal in the product basis.
    """
    if model.theory != QUANTUM:
        raise UnsupportedOperation(
            "entanglement-breaking classification runs on the complex "
            "matrix model only")
    fp = faithful_pair(model, channel.input)
    r = store(model, channel, fp).state
    h_b = channel.output.hilbert_dim
    h_t = fp.purifying.hilbert_dim
    j = model.from_coords(r.system, r.coords)

    if method == "ppt":
        jt = j.reshape(h_b, h_t, h_b, h_t).transpose(0, 3, 2, 1)
        jt = jt.reshape(h_b * h_t, h_b * h_t)
        low = float(np.min(np.linalg.eigvalsh(jt)))
        if low < -tol:
            return EBReport("not-EB", method, low)
        if (h_b, h_t) in ((2, 2), (2, 3), (3, 2)):
            return EBReport("EB", method, low)
        return EBReport("inconclusive", method, low)

    if method == "mp-witness":
        if mp_form is not None:
            povm, states = mp_form
            rebuilt = measure_prepare_map(model, povm, states)
            gap = float(np.max(np.abs(rebuilt.matrix - channel.matrix)))
            if gap > 1e-9:
                raise ValueError(
                    f"claimed measure-and-prepare form misses the channel "
                    f"by {gap:.3e}")
            return EBReport("EB", method, (tuple(povm), tuple(states)))
        off = j - np.diag(np.diag(j))
        if float(np.max(np.abs(off))) > tol:
            return EBReport("inconclusive", method, None)
        w = np.real(np.diag(j)).reshape(h_b, h_t)
        d = fp.system.hilbert_dim
        povm = tuple(
            EffectVec(fp.system, model.to_coords(
                fp.system, np.diag(np.eye(h_t)[t])))
            for t in range(h_t))
        states = tuple(
            StateVec(channel.output, model.to_coords(
                channel.output, np.diag(d * w[:, t])))
            for t in range(h_t))
        return EBReport("EB", method, (povm, states))

    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# causal order and combs


@dataclass(frozen=True)
class CausalOrder:
    ordered: bool
    reduced: Optional[LinearMap]   # first-slot channel when ordered
    residual: float
    witness: Optional[tuple]       # (input a, input b, gap) when not


def _unit_effect_map(model: TheoryModel, system: SystemLabel) -> LinearMap:
    return effect_as_map(model, model.deterministic_effect(system))


def check_causal_order(model: TheoryModel, channel: LinearMap,
                       in_split: int = 1, out_split: int = 1,
                       tol: float = 1e-9) -> CausalOrder:
    """Does discarding the late output make the channel ignore the late
    input? On success the early-slot reduced channel is returned."""
    in_dims, out_dims = channel.input.dims, channel.output.dims
    if not 0 < in_split < len(in_dims) or not 0 < out_split < len(out_dims):
        raise ValueError("both slots need at least one factor")
    a1 = model.system(*in_dims[:in_split])
    a2 = model.system(*in_dims[in_split:])
    b1 = model.system(*out_dims[:out_split])
    b2 = model.system(*out_dims[out_split:])
    discard_late = model.lift_local(_unit_effect_map(model, b2), b1,
                                    where="right")
    early = discard_late @ channel                      # A1 A2 -> B1
    insert = model.lift_local(state_as_map(model, model.invariant_state(a2)),
                              a1, where="right")        # A1 -> A1 A2
    reduced = early @ insert                            # A1 -> B1
    drop2 = model.lift_local(_unit_effect_map(model, a2), a1, where="right")
    resid = float(np.max(np.abs(early.matrix - (reduced @ drop2).matrix)))
    if resid <= tol:
        return CausalOrder(True, reduced, resid, None)
    best = None
    chi = model.invariant_state(a2)
    for probe in model.spanning_states(a2):
        probed = early @ model.lift_local(state_as_map(model, probe), a1,
                                          where="right")
        gap = float(np.max(np.abs(probed.matrix - reduced.matrix)))
        if best is None or gap > best[2]:
            best = (chi, probe, gap)
    return CausalOrder(False, None, resid, best)


@dataclass(frozen=True)
class CombDecomposition:
    """A causally ordered channel as a chain of channels with memory."""

    steps: tuple                 # slot channels, memory in and out
    memories: tuple              # memory system after each slot
    reduced: tuple               # cut-k reduced channels of the original
    residual: float              # rebuild gap


def _sandwich(model: TheoryModel, m: LinearMap, left: SystemLabel,
              right: SystemLabel) -> LinearMap:
    out = m
    if right.dims:
        out = model.lift_local(out, right, where="left")
    if left.dims:
        out = model.lift_local(out, left, where="right")
    return out


def _group_systems(model: TheoryModel, dims: tuple,
                   groups: Sequence[int]) -> list:
    if sum(groups) != len(dims):
        raise ValueError("groups must cover every factor")
    out, at = [], 0
    for g in groups:
        out.append(model.system(*dims[at:at + g]))
        at += g
    return out


def _complement_channel(model: TheoryModel, channel: LinearMap,
                        in_cut: int, out_cut: int) -> LinearMap:
    """The late-slot channel after feeding the invariant state early."""
    in_dims, out_dims = channel.input.dims, channel.output.dims
    a1 = model.system(*in_dims[:in_cut])
    a2 = model.system(*in_dims[in_cut:])
    b1 = model.system(*out_dims[:out_cut])
    b2 = model.system(*out_dims[out_cut:])
    drop_early = model.lift_local(_unit_effect_map(model, b1), b2,
                                  where="left")
    feed = model.lift_local(state_as_map(model, model.invariant_state(a1)),
                            a2, where="left")
    return drop_early @ channel @ feed


def comb_decompose(model: TheoryModel, channel: LinearMap,
                   in_groups: Optional[Sequence[int]] = None,
                   out_groups: Optional[Sequence[int]] = None,
                   tol: float = 1e-9) -> CombDecomposition:
    """Split a causally ordered multi-slot channel into a chain of
    channels passing a memory system forward.

    Product prefixes peel off with one-dimensional memories; the rest
    follows the reversible-dilation route, so memory size there is the
    Kraus rank of the cut-reduced channels.
    """
    in_dims, out_dims = channel.input.dims, channel.output.dims
    in_groups = tuple(in_groups or (1,) * len(in_dims))
    out_groups = tuple(out_groups or (1,) * len(out_dims))
    if len(in_groups) != len(out_groups):
        raise ValueError("need one output slot per input slot")
    n = len(in_groups)
    a_slots = _group_systems(model, in_dims, in_groups)
    b_slots = _group_systems(model, out_dims, out_groups)

    reduced = []
    for k in range(1, n):
        rep = check_causal_order(model, channel,
                                 sum(in_groups[:k]), sum(out_groups[:k]),
                                 tol=tol)
        if not rep.ordered:
            raise CombOrderError(
                f"not causally ordered at cut {k}: residual "
                f"{rep.residual:.3e}", k, rep.residual)
        reduced.append(rep.reduced)

    steps: list = []
    memories: list = []
    start = 0
    cur = channel
    while n - start >= 2:
        rep = check_causal_order(model, cur, in_groups[start],
                                 out_groups[start], tol=tol)
        if not rep.ordered:
            break
        head = rep.reduced
        rest = _complement_channel(model, cur, in_groups[start],
                                   out_groups[start])
        prod = (model.lift_local(rest, b_slots[start], where="right")
                @ model.lift_local(head, rest.input, where="left"))
        if float(np.max(np.abs(prod.matrix - cur.matrix))) <= max(tol, 1e-9):
            steps.append(head)
            memories.append(model.trivial())
            cur = rest
            start += 1
            continue
        break

    remaining = n - start
    if remaining == 1:
        if start == 0:
            dil = stinespring(model, cur)
            steps.append(dil.lifted_channel())
            memories.append(dil.environment)
        else:
            steps.append(cur)
            memories.append(model.trivial())
    elif remaining > 1:
        chain_a = a_slots[start:]
        chain_b = b_slots[start:]
        first = _ordered_reduced(model, cur, in_groups[start],
                                 out_groups[start], tol)
        w_prev = stinespring(model, first)
        steps.append(w_prev.lifted_channel())
        memories.append(w_prev.environment)
        for k in range(1, remaining):
            if k + 1 == remaining:
                d_next = cur
            else:
                d_next = _ordered_reduced(
                    model, cur, sum(in_groups[start:start + k + 1]),
                    sum(out_groups[start:start + k + 1]), tol)
            w_next = stinespring(model, d_next)
            b_past = model.system(
                *[d for s in chain_b[:k] for d in s.dims])
            discard = model.lift_local(
                _unit_effect_map(model, chain_b[k]), b_past, where="right")
            common = discard @ d_next
            iso_a = np.kron(w_prev.isometry,
                            np.eye(chain_a[k].hilbert_dim))
            env_a = model.compose(w_prev.environment, chain_a[k])
            env_b = model.compose(chain_b[k], w_next.environment)
            alpha = Dilation(model, common, iso_a, env_a)
            beta = Dilation(model, common, w_next.isometry, env_b)
            step = connect_dilations(alpha, beta).channel
            steps.append(step)
            memories.append(w_next.environment)
            w_prev = w_next

    residual = _rebuild_residual(model, channel, steps, memories,
                                 a_slots, b_slots)
    return CombDecomposition(tuple(steps), tuple(memories), tuple(reduced),
                             residual)


def _ordered_reduced(model: TheoryModel, channel: LinearMap, in_cut: int,
                     out_cut: int, tol: float) -> LinearMap:
    rep = check_causal_order(model, channel, in_cut, out_cut,
                             tol=max(tol, 1e-8))
    if not rep.ordered:
        raise CombOrderError(
            f"derived channel lost causal order at an inner cut: residual "
            f"{rep.residual:.3e}", -1, rep.residual)
    return rep.reduced


def _rebuild_residual(model: TheoryModel, channel: LinearMap, steps: list,
                      memories: list, a_slots: list, b_slots: list) -> float:
    n = len(steps)
    later = lambda k: model.system(
        *[d for s in a_slots[k:] for d in s.dims])
    acc = _sandwich(model, steps[0], model.trivial(), later(1))
    for k in range(1, n):
        past = model.system(*[d for s in b_slots[:k] for d in s.dims])
        acc = _sandwich(model, steps[k], past, later(k + 1)) @ acc
    full_b = model.system(*[d for s in b_slots for d in s.dims])
    acc = _sandwich(model, _unit_effect_map(model, memories[-1]),
                    full_b, model.trivial()) @ acc
    return float(np.max(np.abs(acc.matrix - channel.matrix)))


# ---------------------------------------------------------------------------
# serialization


def choi_doc(r: ChoiState) -> dict:
    sys = r.state.system
    return {"kind": "choi",
            "system": {"theory": sys.theory, "dims": list(sys.dims)},
            "data": np.asarray(r.state.coords, dtype=float).tolist(),
            "faithful_pair": {
                "dims": list(r.pair.system.dims),
                "probability": r.pair.probability,
                "convention": "uniform-entangled"}}


def save_choi(r: ChoiState, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(choi_doc(r)))


def load_choi(model: TheoryModel, path: str) -> ChoiState:
    from purelab.serialize import load

    state, block = load(path)
    if not block:
        raise ValueError("choi document is missing its faithful_pair block")
    fp = faithful_pair(model, model.system(*block["dims"]))
    if abs(fp.probability - block["probability"]) > 1e-12:
        raise ValueError("faithful-pair normalization does not match")
    n_t = len(fp.purifying.dims)
    n_out = len(state.system.dims) - n_t
    marg = model.marginal(state, range(n_out, n_out + n_t))
    ref = model.marginal(fp.state, range(len(fp.system.dims),
                                         len(fp.system.dims) + n_t))
    gap = float(np.max(np.abs(marg.coords - ref.coords)))
    return ChoiState(state, fp, marg, gap)
