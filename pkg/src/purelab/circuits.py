"""Typed circuit graphs over a theory model.

Boxes are preparation, transformation, or observation events wired over
atomic system factors. Composition is sequential (glue outputs onto
inputs) or parallel (disjoint union). Evaluation contracts the graph in
a topological order down to a probability, a state, an effect, or a map.
Tests bundle outcome-indexed branches over shared systems and support
coarse-graining and conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from purelab.theories import (
    DEFAULT_TOL,
    RANK_FLOOR,
    EffectVec,
    LinearMap,
    StateVec,
    TheoryModel,
    _MatrixModel,
)


class WiringError(Exception):
    """Raised when a circuit graph is ill-formed; carries offending wire ids."""

    def __init__(self, message: str, wires: Sequence[int] = ()):
        super().__init__(message)
        self.wires = tuple(wires)


# ---------------------------------------------------------------------------
# payload wrappers: everything evaluates through a LinearMap


def state_as_map(model: TheoryModel, state: StateVec) -> LinearMap:
    """A preparation as a map from the trivial system."""
    kraus = None
    if isinstance(model, _MatrixModel):
        m = model.from_coords(state.system, state.coords)
        vals, vecs = np.linalg.eigh(m)
        kraus = tuple(np.sqrt(lam) * vecs[:, i].reshape(-1, 1)
                      for i, lam in enumerate(vals) if lam > RANK_FLOOR)
    norm = model.deterministic_effect(state.system).pair(state)
    tag = "channel" if abs(norm - 1.0) <= DEFAULT_TOL else "transformation"
    return LinearMap(model.trivial(), state.system,
                     state.coords.reshape(-1, 1), tag=tag, kraus=kraus)


def effect_as_map(model: TheoryModel, effect: EffectVec) -> LinearMap:
    """An observation as a map into the trivial system."""
    kraus = None
    if isinstance(model, _MatrixModel):
        m = model.from_coords(effect.system, effect.coords)
        vals, vecs = np.linalg.eigh(m)
        kraus = tuple(np.sqrt(lam) * np.conj(vecs[:, i]).reshape(1, -1)
                      for i, lam in enumerate(vals) if lam > RANK_FLOOR)
    unit = model.deterministic_effect(effect.system).coords
    tag = ("channel"
           if float(np.max(np.abs(effect.coords - unit))) <= DEFAULT_TOL
           else "transformation")
    return LinearMap(effect.system, model.trivial(),
                     effect.coords.reshape(1, -1), tag=tag, kraus=kraus)


def as_map(model: TheoryModel, payload) -> LinearMap:
    if isinstance(payload, LinearMap):
        return payload
    if isinstance(payload, StateVec):
        return state_as_map(model, payload)
    if isinstance(payload, EffectVec):
        return effect_as_map(model, payload)
    raise TypeError(f"not a circuit payload: {type(payload).__name__}")


def _payload_kind(payload) -> str:
    if isinstance(payload, StateVec):
        return "prep"
    if isinstance(payload, EffectVec):
        return "effect"
    if isinstance(payload, LinearMap):
        if payload.input.dims == ():
            return "prep"
        if payload.output.dims == ():
            return "effect"
        return "map"
    raise TypeError(f"not a circuit payload: {type(payload).__name__}")


# ---------------------------------------------------------------------------
# the graph


@dataclass(frozen=True)
class Box:
    name: str
    kind: str  # "prep" | "map" | "effect"
    payload: LinearMap
    inputs: tuple
    outputs: tuple


class Circuit:
    """An immutable dataflow graph of boxes over typed wires.

    Wires are atomic system factors identified by integer ids. Dangling
    input wires (consumed but never produced) and dangling output wires
    (produced but never consumed) define the circuit's type, in the
    stored order.
    """

    def __init__(self, model: TheoryModel, boxes: Sequence[Box],
                 wire_dims: Mapping[int, int],
                 input_wires: Sequence[int], output_wires: Sequence[int]):
        self.model = model
        self.boxes = tuple(boxes)
        self.wire_dims = MappingProxyType(dict(wire_dims))
        self.input_wires = tuple(input_wires)
        self.output_wires = tuple(output_wires)
        self._validate()
        self._order = self._topological_order()

    # -- construction helpers

    @staticmethod
    def from_payload(model: TheoryModel, name: str, payload) -> "Circuit":
        kind = _payload_kind(payload)
        m = as_map(model, payload)
        ins = tuple(range(len(m.input.dims)))
        outs = tuple(range(len(ins), len(ins) + len(m.output.dims)))
        dims = {w: d for w, d in zip(ins, m.input.dims)}
        dims.update({w: d for w, d in zip(outs, m.output.dims)})
        box = Box(name, kind, m, ins, outs)
        return Circuit(model, (box,), dims, ins, outs)

    # -- validation

    def _validate(self) -> None:
        produced = {}
        consumed = {}
        for b, box in enumerate(self.boxes):
            if box.kind not in ("prep", "map", "effect"):
                raise WiringError(f"unknown box kind {box.kind!r}")
            if len(set(box.inputs)) != len(box.inputs):
                raise WiringError("box reuses an input wire", box.inputs)
            if len(set(box.outputs)) != len(box.outputs):
                raise WiringError("box reuses an output wire", box.outputs)
            in_dims = tuple(self._dim(w) for w in box.inputs)
            out_dims = tuple(self._dim(w) for w in box.outputs)
            if in_dims != box.payload.input.dims:
                raise WiringError(
                    f"box {box.name!r} input type mismatch: wires carry "
                    f"{in_dims}, payload wants {box.payload.input.dims}",
                    box.inputs)
            if out_dims != box.payload.output.dims:
                raise WiringError(
                    f"box {box.name!r} output type mismatch: wires carry "
                    f"{out_dims}, payload yields {box.payload.output.dims}",
                    box.outputs)
            for w in box.inputs:
                if w in consumed:
                    raise WiringError(f"wire {w} consumed twice", (w,))
                consumed[w] = b
            for w in box.outputs:
                if w in produced:
                    raise WiringError(f"wire {w} produced twice", (w,))
                produced[w] = b

        if len(set(self.input_wires)) != len(self.input_wires):
            raise WiringError("duplicate input wire", self.input_wires)
        if len(set(self.output_wires)) != len(self.output_wires):
            raise WiringError("duplicate output wire", self.output_wires)
        for w in self.input_wires:
            if w in produced:
                raise WiringError(
                    f"declared input wire {w} is produced internally", (w,))
        sources = set(produced) | set(self.input_wires)
        for w in consumed:
            if w not in sources:
                raise WiringError(f"wire {w} consumed but never produced", (w,))
        dangling = sorted(sources - set(consumed))
        if sorted(self.output_wires) != dangling:
            raise WiringError(
                f"output wires {sorted(self.output_wires)} do not match the "
                f"unconsumed wires {dangling}", dangling)
        for w in self.wire_dims:
            if w not in sources and w not in consumed:
                raise WiringError(f"wire {w} is not connected", (w,))

    def _dim(self, w: int) -> int:
        if w not in self.wire_dims:
            raise WiringError(f"wire {w} has no declared dimension", (w,))
        return self.wire_dims[w]

    def _topological_order(self) -> tuple:
        producer = {w: b for b, box in enumerate(self.boxes)
                    for w in box.outputs}
        available = set(self.input_wires)
        remaining = list(range(len(self.boxes)))
        order = []
        while remaining:
            ready = [b for b in remaining
                     if all(w in available for w in self.boxes[b].inputs)]
            if not ready:
                stuck = [w for b in remaining for w in self.boxes[b].inputs
                         if w not in available and producer.get(w) in remaining]
                raise WiringError("circuit contains a cycle", stuck)
            b = ready[0]
            remaining.remove(b)
            available.update(self.boxes[b].outputs)
            order.append(b)
        return tuple(order)

    # -- types

    @property
    def input_system(self):
        return self.model.system(*[self.wire_dims[w] for w in self.input_wires])

    @property
    def output_system(self):
        return self.model.system(*[self.wire_dims[w] for w in self.output_wires])

    def relabelled(self, offset: int) -> "Circuit":
        """The same graph with every wire id shifted by offset."""
        boxes = tuple(Box(b.name, b.kind, b.payload,
                          tuple(w + offset for w in b.inputs),
                          tuple(w + offset for w in b.outputs))
                      for b in self.boxes)
        dims = {w + offset: d for w, d in self.wire_dims.items()}
        return Circuit(self.model, boxes, dims,
                       tuple(w + offset for w in self.input_wires),
                       tuple(w + offset for w in self.output_wires))


def _max_wire(c: Circuit) -> int:
    return max(c.wire_dims, default=-1)


def compose_seq(first: Circuit, second: Circuit) -> Circuit:
    """Feed the outputs of `first` into the inputs of `second`."""
    if first.model is not second.model:
        raise WiringError("cannot compose circuits over different models")
    t1 = tuple(first.wire_dims[w] for w in first.output_wires)
    t2 = tuple(second.wire_dims[w] for w in second.input_wires)
    if t1 != t2:
        raise WiringError(
            f"sequential type mismatch: outputs {t1} vs inputs {t2}",
            tuple(first.output_wires) + tuple(second.input_wires))
    offset = _max_wire(first) + 1 + _max_wire(second) + 1
    glue = dict(zip(second.input_wires,
                    first.output_wires))  # second's wire -> first's wire
    rename = {w: glue.get(w, w + offset) for w in second.wire_dims}
    boxes = first.boxes + tuple(
        Box(b.name, b.kind, b.payload,
            tuple(rename[w] for w in b.inputs),
            tuple(rename[w] for w in b.outputs))
        for b in second.boxes)
    dims = dict(first.wire_dims)
    dims.update({rename[w]: d for w, d in second.wire_dims.items()})
    return Circuit(first.model, boxes, dims, first.input_wires,
                   tuple(rename[w] for w in second.output_wires))


def compose_par(left: Circuit, right: Circuit) -> Circuit:
    """Place two circuits side by side; left wires come first."""
    if left.model is not right.model:
        raise WiringError("cannot compose circuits over different models")
    shifted = right.relabelled(_max_wire(left) + 1)
    return Circuit(left.model, left.boxes + shifted.boxes,
                   {**left.wire_dims, **shifted.wire_dims},
                   left.input_wires + shifted.input_wires,
                   left.output_wires + shifted.output_wires)


# ---------------------------------------------------------------------------
# evaluation


def _is_topological(c: Circuit, order: Sequence[int]) -> bool:
    if sorted(order) != list(range(len(c.boxes))):
        return False
    available = set(c.input_wires)
    for b in order:
        if any(w not in available for w in c.boxes[b].inputs):
            return False
        available.update(c.boxes[b].outputs)
    return True


def evaluate(c: Circuit, order: Optional[Sequence[int]] = None):
    """Contract the circuit. Closed circuits give a float; circuits with
    only outputs give a StateVec, only inputs an EffectVec, both a
    LinearMap from the input to the output system."""
    model = c.model
    if order is None:
        order = c._order
    elif not _is_topological(c, tuple(order)):
        raise WiringError("not a topological order of the circuit")

    frontier = list(c.input_wires)
    acc = _identity_on(model, frontier, c.wire_dims)
    for b in order:
        box = c.boxes[b]
        k = len(box.inputs)
        # preparations and trailing blocks lift on the right, so parallel
        # chains contract without inserting wire permutations
        if k == 0 or (k < len(frontier) and list(box.inputs) == frontier[-k:]):
            rest = frontier[:len(frontier) - k]
            m = box.payload
            if rest:
                rest_sys = model.system(*[c.wire_dims[w] for w in rest])
                m = model.lift_local(m, rest_sys, where="right")
            acc = m @ acc
            frontier = rest + list(box.outputs)
            continue
        if frontier[:k] != list(box.inputs):
            rest = [w for w in frontier if w not in box.inputs]
            new_front = list(box.inputs) + rest
            perm = tuple(frontier.index(w) for w in new_front)
            sys_now = model.system(*[c.wire_dims[w] for w in frontier])
            acc = model.permute_map(sys_now, perm) @ acc
            frontier = new_front
        rest = frontier[k:]
        m = box.payload
        if rest:
            rest_sys = model.system(*[c.wire_dims[w] for w in rest])
            m = model.lift_local(m, rest_sys, where="left")
        acc = m @ acc
        frontier = list(box.outputs) + rest

    if frontier != list(c.output_wires):
        perm = tuple(frontier.index(w) for w in c.output_wires)
        sys_now = model.system(*[c.wire_dims[w] for w in frontier])
        acc = model.permute_map(sys_now, perm) @ acc

    if not c.input_wires and not c.output_wires:
        return float(acc.matrix[0, 0])
    if not c.input_wires:
        return StateVec(acc.output, acc.matrix[:, 0])
    if not c.output_wires:
        return EffectVec(acc.input, acc.matrix[0, :])
    return acc


def _identity_on(model: TheoryModel, wires: Sequence[int],
                 dims: Mapping[int, int]) -> LinearMap:
    if not wires:
        triv = model.trivial()
        kraus = (np.eye(1),) if isinstance(model, _MatrixModel) else None
        return LinearMap(triv, triv, np.eye(1), tag="reversible", kraus=kraus)
    return model.identity_map(model.system(*[dims[w] for w in wires]))


# ---------------------------------------------------------------------------
# tests: outcome-indexed families sharing input and output systems


class Test:
    """A finite family of branches over shared systems whose total
    preserves the unit effect: summed over outcomes, pulling the output
    unit effect back gives the input unit effect within tol."""

    __test__ = False  # keep pytest from collecting the class

    def __init__(self, model: TheoryModel, branches: Mapping[object, object],
        tol: float = DEFAULT_TOL):
        if not branches:
            raise ValueError("a test needs at least one outcome")
        self.model = model
        self.outcomes = tuple(branches)
        self.branches = MappingProxyType(dict(branches))
        kinds = {type(v) for v in self.branches.values()}
        if len(kinds) != 1:
            raise ValueError("test branches must share one payload kind")
        first = self.branches[self.outcomes[0]]
        self.kind = _payload_kind(first)
        maps = [as_map(model, v) for v in self.branches.values()]
        self.input_system = maps[0].input
        self.output_system = maps[0].output
        for m in maps[1:]:
            if m.input != self.input_system or m.output != self.output_system:
                raise ValueError("test branches must share systems")
        total = sum(m.matrix for m in maps)
        e_out = model.deterministic_effect(self.output_system).coords
        e_in = model.deterministic_effect(self.input_system).coords
        resid = float(np.max(np.abs(e_out @ total - e_in)))
        if resid > tol:
            raise ValueError(
                f"test normalization fails: residual {resid:.3e} > {tol:.1e}")
        self.normalization_residual = resid

    def branch_map(self, outcome) -> LinearMap:
        return as_map(self.model, self.branches[outcome])

    def total_map(self) -> LinearMap:
        mats = [self.branch_map(o).matrix for o in self.outcomes]
        return LinearMap(self.input_system, self.output_system,
                         sum(mats), tag="channel")

    def coarse_grain(self, groups: Mapping[object, Sequence[object]]) -> "Test":
        """Merge outcomes: each new outcome is the sum of a block of old
        ones. The blocks must partition the outcome set."""
        flat = [o for block in groups.values() for o in block]
        if sorted(map(repr, flat)) != sorted(map(repr, self.outcomes)):
            raise ValueError("groups must partition the outcomes")
        merged = {}
        for label, block in groups.items():
            mats = [self.branch_map(o).matrix for o in block]
            merged[label] = LinearMap(self.input_system, self.output_system,
                                      sum(mats), tag="transformation")
        return Test(self.model, merged)

    def condition(self, chooser: Mapping[object, "Test"]) -> "Test":
        """After each outcome i, run the test chooser[i]; outcomes become
        pairs (i, j). All chosen tests must share systems, with input
        equal to this test's output."""
        for o in self.outcomes:
            if o not in chooser:
                raise ValueError(f"no follow-up test for outcome {o!r}")
        outs = {chooser[o].output_system for o in self.outcomes}
        if len(outs) != 1:
            raise ValueError("follow-up tests must share an output system")
        branches = {}
        for o in self.outcomes:
            nxt = chooser[o]
            if nxt.input_system != self.output_system:
                raise ValueError(
                    f"follow-up test for outcome {o!r} expects input "
                    f"{nxt.input_system}, got {self.output_system}")
            for j in nxt.outcomes:
                branches[(o, j)] = nxt.branch_map(j) @ self.branch_map(o)
        return Test(self.model, branches)


def identity_test(model: TheoryModel, system) -> Test:
    return Test(model, {"id": model.identity_map(system)})
