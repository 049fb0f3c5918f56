"""JSON interchange for states, effects, maps, Kraus lists and Choi states.

Layout: {"system": {"theory": ..., "dims": [...]}, "kind": ..., "data": ...}
with nested row-major arrays. Complex entries are [re, im] pairs. Floats are
emitted via Python's repr so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from typing import Optional, Union

import numpy as np

from purelab.theories import (
    EffectVec,
    LinearMap,
    StateVec,
    SystemLabel,
    check_channel,
    get_model,
)

KINDS = ("state", "effect", "map", "kraus", "choi", "code")


def _encode_system(system: SystemLabel) -> dict:
    return {"theory": system.theory, "dims": list(system.dims)}


def _decode_system(block: dict) -> SystemLabel:
    model = get_model(block["theory"])
    return model.system(*block["dims"])


def _encode_real(arr: np.ndarray) -> list:
    return np.asarray(arr, dtype=float).tolist()


def _encode_complex(mat: np.ndarray) -> list:
    mat = np.asarray(mat, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in mat]


def _decode_complex(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def encode(obj: Union[StateVec, EffectVec, LinearMap], extra: Optional[dict] = None) -> dict:
    """Encode a carrier into the interchange dict."""
    if isinstance(obj, StateVec):
        out = {"kind": "state", "system": _encode_system(obj.system),
               "data": _encode_real(obj.coords)}
    elif isinstance(obj, EffectVec):
        out = {"kind": "effect", "system": _encode_system(obj.system),
               "data": _encode_real(obj.coords)}
    elif isinstance(obj, LinearMap):
        out = {"kind": "map", "system": _encode_system(obj.input),
               "system_out": _encode_system(obj.output),
               "tag": obj.tag,
               "data": _encode_real(obj.matrix)}
        if obj.kraus is not None:
            out["kraus_data"] = [_encode_complex(k) for k in obj.kraus]
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")
    if extra:
        out.update(extra)
    return out


def encode_kraus(system_in: SystemLabel, system_out: SystemLabel,
                 kraus: list) -> dict:
    return {"kind": "kraus", "system": _encode_system(system_in),
            "system_out": _encode_system(system_out),
            "data": [_encode_complex(k) for k in kraus]}


def decode(doc: dict):
    """Decode an interchange dict into the matching carrier."""
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    system = _decode_system(doc["system"])
    if kind == "state":
        return StateVec(system, np.asarray(doc["data"], dtype=float))
    if kind == "effect":
        return EffectVec(system, np.asarray(doc["data"], dtype=float))
    if kind == "map":
        out_sys = _decode_system(doc.get("system_out", doc["system"]))
        kraus = None
        if "kraus_data" in doc:
            kraus = tuple(_decode_complex(k) for k in doc["kraus_data"])
        return LinearMap(system, out_sys, np.asarray(doc["data"], dtype=float),
                         tag=doc.get("tag", "unconstrained"), kraus=kraus)
    if kind == "kraus":
        out_sys = _decode_system(doc.get("system_out", doc["system"]))
        model = get_model(system.theory)
        kraus = [_decode_complex(k) for k in doc["data"]]
        if model.theory == "real-quantum":
            kraus = [np.real(k) for k in kraus]
        m = model.map_from_kraus(system, out_sys, kraus)
        kind_found = check_channel(m, model).kind
        tag = kind_found if kind_found in ("channel", "transformation") else "unconstrained"
        return LinearMap(system, out_sys, m.matrix, tag=tag, kraus=m.kraus)
    if kind == "choi":
        state = StateVec(system, np.asarray(doc["data"], dtype=float))
        return state, doc.get("faithful_pair", {})
    if kind == "code":
        projector = _decode_complex(doc["projector"])
        kraus = [_decode_complex(k) for k in doc["kraus"]]
        return system, projector, kraus
    raise AssertionError


def save(obj, path: str, extra: Optional[dict] = None) -> None:
    doc = obj if isinstance(obj, dict) else encode(obj, extra)
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(doc))


def load(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return decode(json.load(f))


def load_doc(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def canonical_json(doc) -> str:
    """Deterministic rendering: sorted keys, fixed separators, newline at end."""
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
