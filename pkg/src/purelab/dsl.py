"""A small textual language for wiring operational circuits.

Grammar (whitespace-insensitive, ``#`` starts a comment, ``;`` is
optional statement punctuation)::

    script   := stmt+
    stmt     := decl | run
    decl     := ("prep" | "box" | "eff") ident ":" type ["=" source]
    type     := sys | sys "->" sys
    sys      := ident ("*" ident)*
    run      := "run" ident "=" pipeline
    pipeline := ident ("." ident)*
    source   := "file(" string ")" | "kraus(" string ")" | builtin-ident

System idents name atomic factors; their dimensions are bound at
resolution time. A pipeline builds a circuit stage by stage: a
preparation appends its fresh wires on the right of the open frontier,
any other stage consumes the leading frontier wires and pushes its
outputs back on the front. Use the ``perm`` builtin to reorder wires.

Builtins: ``bell`` (maximally entangled / correlated pair), ``mixed``
(invariant state), ``state{i}`` and ``proj{i}`` (basis preparation and
effect), ``unit`` (deterministic effect), ``id``, ``perm`` (wire
reordering read off the declared type), ``pauli{k}`` (displacement
conjugation; k encodes shift k mod d and clock k div d, so pauli1 is
the flip in every theory), ``bell_eff{k}`` (entangled measurement
outcome, displacement on the first slot), ``tele_corr{k}`` (the
correction undoing bell_eff{k} on the far wire; with the first-slot
convention it coincides with pauli{k}).

Errors carry line and column and come in three kinds: lexical,
syntactic, and type (which covers all binding and wiring mismatches).
"""

from __future__ import annotations

import itertools
import os
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from purelab import serialize
from purelab.circuits import Box, Circuit, as_map
from purelab.theories import (
    CLASSICAL,
    EffectVec,
    LinearMap,
    StateVec,
    TheoryModel,
    weyl,
)

KEYWORDS = ("prep", "box", "eff", "run")
_INDEXED = re.compile(r"^(bell_eff|pauli|tele_corr|state|proj)(\d+)$")
_PLAIN_BUILTINS = ("bell", "mixed", "unit", "id", "perm")


class DslError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class DslLexicalError(DslError):
    pass


class DslSyntaxError(DslError):
    pass


class DslTypeError(DslError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class SourceRef:
    kind: str  # "file" | "kraus" | "builtin"
    value: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Decl:
    kind: str  # "prep" | "box" | "eff"
    name: str
    in_factors: tuple
    out_factors: tuple
    source: Optional[SourceRef] = None
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Run:
    name: str
    stages: tuple
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class CircuitScript:
    decls: tuple
    runs: tuple

    def decl(self, name: str) -> Decl:
        for d in self.decls:
            if d.name == name:
                return d
        raise KeyError(name)


# ---------------------------------------------------------------------------
# lexer


@dataclass(frozen=True)
class _Token:
    kind: str  # "ident" | "string" | one of the punctuation lexemes | "eof"
    value: str
    line: int
    col: int


_PUNCT = (":", "=", "*", ".", "(", ")")


def _lex(text: str) -> list:
    out = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r;":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "-":
            if i + 1 < n and text[i + 1] == ">":
                out.append(_Token("->", "->", line, col))
                i += 2
                col += 2
                continue
            raise DslLexicalError("stray '-' (did you mean '->'?)", line, col)
        if ch in _PUNCT:
            out.append(_Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch == '"':
            start_line, start_col = line, col
            j = i + 1
            while j < n and text[j] not in '"\n':
                j += 1
            if j >= n or text[j] != '"':
                raise DslLexicalError("unterminated string",
                                      start_line, start_col)
            out.append(_Token("string", text[i + 1:j], start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            out.append(_Token("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise DslLexicalError(f"unexpected character {ch!r}", line, col)
    out.append(_Token("eof", "", line, col))
    return out


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, tokens: list):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            shown = tok.value or "end of input"
            raise DslSyntaxError(f"expected {what}, found {shown!r}",
                                 tok.line, tok.col)
        return self.advance()

    def ident(self, what: str) -> _Token:
        tok = self.expect("ident", what)
        if tok.value in KEYWORDS:
            raise DslSyntaxError(
                f"keyword {tok.value!r} cannot be used as {what}",
                tok.line, tok.col)
        return tok


def _parse_sys(p: _Parser) -> tuple:
    names = [p.ident("a system name").value]
    while p.peek().kind == "*":
        p.advance()
        names.append(p.ident("a system name").value)
    return tuple(names)


def _parse_source(p: _Parser) -> SourceRef:
    tok = p.ident("a payload source")
    if tok.value in ("file", "kraus"):
        p.expect("(", f"'(' after {tok.value}")
        path = p.expect("string", "a quoted path")
        p.expect(")", "')'")
        return SourceRef(tok.value, path.value, tok.line, tok.col)
    name = tok.value
    if name not in _PLAIN_BUILTINS and not _INDEXED.match(name):
        raise DslTypeError(f"unknown builtin {name!r}", tok.line, tok.col)
    return SourceRef("builtin", name, tok.line, tok.col)


def _parse_decl(p: _Parser, seen: dict) -> Decl:
    kw = p.advance()
    name = p.ident("a declaration name")
    if name.value in seen:
        raise DslTypeError(f"{name.value!r} is already declared",
                           name.line, name.col)
    p.expect(":", "':' after the name")
    first = _parse_sys(p)
    second = None
    if p.peek().kind == "->":
        arrow = p.advance()
        second = _parse_sys(p)
    source = None
    if p.peek().kind == "=":
        p.advance()
        source = _parse_source(p)

    if kw.value == "prep":
        if second is not None:
            raise DslTypeError("a preparation declares only an output system",
                               arrow.line, arrow.col)
        ins, outs = (), first
    elif kw.value == "eff":
        if second is not None:
            raise DslTypeError("an observation declares only an input system",
                               arrow.line, arrow.col)
        ins, outs = first, ()
    else:
        if second is None:
            raise DslTypeError(
                "a transformation needs an input and an output system",
                kw.line, kw.col)
        ins, outs = first, second
    return Decl(kw.value, name.value, ins, outs, source, kw.line, kw.col)


def _parse_run(p: _Parser, seen: dict) -> Run:
    kw = p.advance()
    name = p.ident("a run name")
    if name.value in seen:
        raise DslTypeError(f"{name.value!r} is already declared",
                           name.line, name.col)
    p.expect("=", "'=' after the run name")
    stages = [p.ident("a pipeline stage")]
    while p.peek().kind == ".":
        p.advance()
        stages.append(p.ident("a pipeline stage"))
    for st in stages:
        if st.value not in seen or seen[st.value] != "decl":
            raise DslTypeError(f"pipeline stage {st.value!r} is not a "
                               "declared prep, box, or eff",
                               st.line, st.col)
    return Run(name.value, tuple(s.value for s in stages), kw.line, kw.col)


def parse_circuit(text: str) -> CircuitScript:
    """Parse a script into its syntax tree (positions excluded from
    equality, so round-tripping through print_circuit is the identity)."""
    p = _Parser(_lex(text))
    decls, runs = [], []
    seen = {}
    while p.peek().kind != "eof":
        tok = p.peek()
        if tok.kind != "ident" or tok.value not in KEYWORDS:
            shown = tok.value or "end of input"
            raise DslSyntaxError(
                f"expected 'prep', 'box', 'eff' or 'run', found {shown!r}",
                tok.line, tok.col)
        if tok.value == "run":
            run = _parse_run(p, seen)
            seen[run.name] = "run"
            runs.append(run)
        else:
            decl = _parse_decl(p, seen)
            seen[decl.name] = "decl"
            decls.append(decl)
    if not decls and not runs:
        raise DslSyntaxError("empty script", 1, 1)
    return CircuitScript(tuple(decls), tuple(runs))


def print_circuit(script: CircuitScript) -> str:
    """Canonical text: declarations first, then runs, one per line."""
    lines = []
    for d in script.decls:
        typ = "*".join(d.out_factors if d.kind == "prep" else d.in_factors)
        if d.kind == "box":
            typ = "*".join(d.in_factors) + " -> " + "*".join(d.out_factors)
        stmt = f"{d.kind} {d.name} : {typ}"
        if d.source is not None:
            if d.source.kind == "builtin":
                stmt += f" = {d.source.value}"
            else:
                stmt += f' = {d.source.kind}("{d.source.value}")'
        lines.append(stmt)
    for r in script.runs:
        lines.append(f"run {r.name} = " + ".".join(r.stages))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# resolution: bind factor dims, build payloads, wire pipelines


@dataclass(frozen=True)
class ResolvedScript:
    model: TheoryModel
    bindings: Mapping[str, int]
    payloads: Mapping[str, object]
    circuits: Mapping[str, Circuit]


def _factor_order(script: CircuitScript) -> list:
    order = []
    for d in script.decls:
        for name in d.in_factors + d.out_factors:
            if name not in order:
                order.append(name)
    return order


def _bind_dims(script: CircuitScript, model: TheoryModel,
               dims: Union[None, int, Mapping, Sequence]) -> dict:
    order = _factor_order(script)
    default = model.default_system.dims[0]
    if dims is None:
        return {name: default for name in order}
    if isinstance(dims, int):
        return {name: dims for name in order}
    if isinstance(dims, Mapping):
        out = {name: int(dims.get(name, default)) for name in order}
        return out
    seq = list(dims)
    if len(seq) > len(order):
        raise DslTypeError(
            f"{len(seq)} dimensions given but the script uses "
            f"{len(order)} system names", 1, 1)
    out = {name: default for name in order}
    for name, d in zip(order, seq):
        out[name] = int(d)
    return out


def _decl_systems(decl: Decl, model: TheoryModel, bindings: dict):
    sys_in = model.system(*[bindings[f] for f in decl.in_factors])
    sys_out = model.system(*[bindings[f] for f in decl.out_factors])
    return sys_in, sys_out


def _real_unitary(mat: np.ndarray, source: SourceRef) -> np.ndarray:
    if np.max(np.abs(mat.imag)) > 1e-12:
        raise DslTypeError(
            f"builtin {source.value!r} has no real representative at this "
            "dimension", source.line, source.col)
    return mat.real


def _displacement(model: TheoryModel, source: SourceRef, h: int, k: int):
    if k >= h * h:
        raise DslTypeError(
            f"builtin {source.value!r}: index {k} out of range for "
            f"dimension {h}", source.line, source.col)
    w = weyl(h, k % h, k // h)
    if getattr(model, "real_carrier", False):
        w = _real_unitary(w, source)
    return w


def _builtin_payload(model: TheoryModel, decl: Decl, bindings: dict):
    source = decl.source
    name = source.value
    sys_in, sys_out = _decl_systems(decl, model, bindings)
    matched = _INDEXED.match(name)
    base = matched.group(1) if matched else name
    idx = int(matched.group(2)) if matched else None

    def type_error(msg):
        return DslTypeError(f"builtin {name!r}: {msg}", source.line, source.col)

    expected_kind = {"bell": "prep", "mixed": "prep", "state": "prep",
                     "unit": "eff", "proj": "eff", "bell_eff": "eff",
                     "id": "box", "perm": "box", "pauli": "box",
                     "tele_corr": "box"}[base]
    if decl.kind != expected_kind:
        raise type_error(f"must be declared as a {expected_kind}")

    if base == "mixed":
        return model.invariant_state(sys_out)
    if base == "unit":
        return model.deterministic_effect(sys_in)
    if base == "id":
        if sys_in != sys_out:
            raise type_error("input and output systems differ")
        return model.identity_map(sys_in)
    if base == "perm":
        if sorted(decl.in_factors) != sorted(decl.out_factors) \
                or len(set(decl.in_factors)) != len(decl.in_factors):
            raise type_error("output factors must be a permutation of "
                             "distinct input factors")
        perm = tuple(decl.in_factors.index(f) for f in decl.out_factors)
        return model.permute_map(sys_in, perm)
    if base == "state":
        h = sys_out.hilbert_dim
        if idx >= h:
            raise type_error(f"index {idx} out of range for dimension {h}")
        if model.theory == CLASSICAL:
            coords = np.zeros(sys_out.coord_dim)
            coords[idx] = 1.0
            return StateVec(sys_out, coords)
        return model.basis_state(sys_out, idx)
    if base == "proj":
        h = sys_in.hilbert_dim
        if idx >= h:
            raise type_error(f"index {idx} out of range for dimension {h}")
        if model.theory == CLASSICAL:
            coords = np.zeros(sys_in.coord_dim)
            coords[idx] = 1.0
            return EffectVec(sys_in, coords)
        m = np.zeros((h, h))
        m[idx, idx] = 1.0
        return EffectVec(sys_in, model.to_coords(sys_in, m))

    if base == "bell":
        if len(sys_out.dims) != 2 or sys_out.dims[0] != sys_out.dims[1]:
            raise type_error("needs two factors of equal dimension")
        d = sys_out.dims[0]
        if model.theory == CLASSICAL:
            coords = np.zeros(sys_out.coord_dim)
            coords[np.arange(d) * d + np.arange(d)] = 1.0 / d
            return StateVec(sys_out, coords)
        vec = np.eye(d).reshape(d * d) / np.sqrt(d)
        return model.pure_state(sys_out, vec)
    if base == "bell_eff":
        if len(sys_in.dims) != 2 or sys_in.dims[0] != sys_in.dims[1]:
            raise type_error("needs two factors of equal dimension")
        d = sys_in.dims[0]
        if model.theory == CLASSICAL:
            if idx >= d:
                raise type_error(f"index {idx} out of range: a classical "
                                 f"correlated measurement has {d} outcomes")
            i = np.arange(d * d) // d
            j = np.arange(d * d) % d
            return EffectVec(sys_in,
                             ((i - j) % d == idx).astype(float))
        if idx >= d * d:
            raise type_error(f"index {idx} out of range for {d * d} outcomes")
        w = weyl(d, idx % d, idx // d)
        if getattr(model, "real_carrier", False):
            w = _real_unitary(w, source)
        vec = (w @ np.eye(d)).reshape(d * d) / np.sqrt(d)
        proj = np.outer(vec, np.conj(vec))
        return EffectVec(sys_in, model.to_coords(sys_in, proj))

    # displacement conjugations: pauli{k} and its teleportation alias
    if sys_in != sys_out:
        raise type_error("input and output systems differ")
    h = sys_in.hilbert_dim
    if model.theory == CLASSICAL:
        if idx >= h:
            raise type_error(f"index {idx} out of range for dimension {h}")
        mat = np.zeros((h, h))
        mat[(np.arange(h) + idx) % h, np.arange(h)] = 1.0
        return model.stochastic_channel(sys_in, sys_out, mat)
    return model.unitary_channel(sys_in, _displacement(model, source,
                                                       h, idx))


def _file_payload(model: TheoryModel, decl: Decl, bindings: dict,
                  base_dir: str):
    source = decl.source
    path = source.value
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    try:
        obj = serialize.load(path)
    except FileNotFoundError:
        raise DslTypeError(f"payload file not found: {source.value}",
                           source.line, source.col)
    sys_in, sys_out = _decl_systems(decl, model, bindings)
    kind_ok = {
        "prep": isinstance(obj, StateVec) and obj.system == sys_out,
        "eff": isinstance(obj, EffectVec) and obj.system == sys_in,
        "box": isinstance(obj, LinearMap) and obj.input == sys_in
               and obj.output == sys_out,
    }[decl.kind]
    if not kind_ok:
        raise DslTypeError(
            f"payload in {source.value} does not match the declared "
            f"{decl.kind} type", source.line, source.col)
    return obj


def resolve(script: CircuitScript, model: TheoryModel,
            dims: Union[None, int, Mapping, Sequence] = None,
            payloads: Optional[Mapping[str, object]] = None,
            base_dir: str = ".") -> ResolvedScript:
    """Bind system names to dimensions, construct every declared payload,
    and wire every run into a Circuit."""
    bindings = _bind_dims(script, model, dims)
    provided = dict(payloads or {})
    built = {}
    used = {name for run in script.runs for name in run.stages}
    for decl in script.decls:
        if decl.name in provided:
            built[decl.name] = provided[decl.name]
        elif decl.source is None:
            if decl.name in used:
                raise DslTypeError(
                    f"declaration {decl.name!r} is used in a run but has "
                    "no source", decl.line, decl.col)
            continue
        elif decl.source.kind == "builtin":
            built[decl.name] = _builtin_payload(model, decl, bindings)
        else:
            built[decl.name] = _file_payload(model, decl, bindings, base_dir)

    circuits = {}
    for run in script.runs:
        circuits[run.name] = _wire_run(script, run, model, bindings, built)
    return ResolvedScript(model, bindings, built, circuits)


def _wire_run(script: CircuitScript, run: Run, model: TheoryModel,
              bindings: dict, payloads: dict) -> Circuit:
    counter = itertools.count()
    frontier = []  # open wire ids, left to right
    wire_dims = {}
    boxes = []
    for stage in run.stages:
        decl = script.decl(stage)
        m = as_map(model, payloads[stage])
        need = m.input.dims
        if decl.kind == "prep":
            ins = ()
        else:
            if len(frontier) < len(need):
                raise DslTypeError(
                    f"stage {stage!r} consumes {len(need)} wires but the "
                    f"frontier holds {len(frontier)}", run.line, run.col)
            ins = tuple(frontier[:len(need)])
            have = tuple(wire_dims[w] for w in ins)
            if have != tuple(need):
                raise DslTypeError(
                    f"stage {stage!r} expects wire dimensions {tuple(need)} "
                    f"but the frontier carries {have}", run.line, run.col)
            frontier = frontier[len(need):]
        outs = tuple(next(counter) for _ in m.output.dims)
        for w, d in zip(outs, m.output.dims):
            wire_dims[w] = d
        kind = {"prep": "prep", "box": "map", "eff": "effect"}[decl.kind]
        boxes.append(Box(stage, kind, m, ins, outs))
        if decl.kind == "prep":
            frontier = frontier + list(outs)
        else:
            frontier = list(outs) + frontier
    return Circuit(model, boxes, wire_dims, (), tuple(frontier))
