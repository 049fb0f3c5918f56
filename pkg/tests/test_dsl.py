import glob
import os

import numpy as np
import pytest

from purelab.circuits import evaluate
from purelab.dsl import (
    CircuitScript,
    Decl,
    DslLexicalError,
    DslSyntaxError,
    DslTypeError,
    Run,
    SourceRef,
    parse_circuit,
    print_circuit,
    resolve,
)
from purelab import serialize
from purelab.theories import (
    classical_model,
    quantum_model,
    real_quantum_model,
    weyl,
)

from oracles import apply_kraus, haar_state

CL = classical_model(2)
QU = quantum_model(2)
RQ = real_quantum_model(2)

SCRIPT_DIR = os.path.join(os.path.dirname(__file__), "..", "scripts")


def _corpus():
    paths = sorted(glob.glob(os.path.join(SCRIPT_DIR, "*.opc")))
    assert len(paths) == 10
    return paths


@pytest.mark.parametrize("path", _corpus())
def test_round_trip_on_corpus(path):
    with open(path) as f:
        text = f.read()
    ast = parse_circuit(text)
    assert parse_circuit(print_circuit(ast)) == ast


def test_three_box_chain_example():
    ast = parse_circuit("prep r:A; box C:A->B; eff a:B")
    assert ast == CircuitScript(
        (Decl("prep", "r", (), ("A",)),
         Decl("box", "C", ("A",), ("B",)),
         Decl("eff", "a", ("B",), ())),
        ())


def test_canonical_print_form():
    ast = parse_circuit("prep  r : A*B = bell\nrun x=r")
    assert print_circuit(ast) == "prep r : A*B = bell\nrun x = r\n"


def test_lexical_errors_carry_position():
    with pytest.raises(DslLexicalError) as exc:
        parse_circuit("prep r : A\nbox ? : A -> A")
    assert (exc.value.line, exc.value.col) == (2, 5)
    with pytest.raises(DslLexicalError):
        parse_circuit('prep r : A = file("unterminated')
    with pytest.raises(DslLexicalError):
        parse_circuit("box C : A - B")


def test_syntax_errors():
    with pytest.raises(DslSyntaxError) as exc:
        parse_circuit("prep : A")
    assert exc.value.line == 1
    with pytest.raises(DslSyntaxError):
        parse_circuit("prep r A")
    with pytest.raises(DslSyntaxError):
        parse_circuit("box C : A -> ")
    with pytest.raises(DslSyntaxError):
        parse_circuit("run x = ")
    with pytest.raises(DslSyntaxError):
        parse_circuit("")
    with pytest.raises(DslSyntaxError):
        parse_circuit("prep run : A")


def test_type_errors_at_parse():
    with pytest.raises(DslTypeError):
        parse_circuit("box C : A")
    with pytest.raises(DslTypeError):
        parse_circuit("prep r : A -> B")
    with pytest.raises(DslTypeError):
        parse_circuit("eff a : A -> B")
    with pytest.raises(DslTypeError):
        parse_circuit("prep r : A = blech")
    with pytest.raises(DslTypeError):
        parse_circuit("prep r : A\nprep r : A")
    with pytest.raises(DslTypeError) as exc:
        parse_circuit("prep r : A = mixed\nrun x = r.ghost")
    assert exc.value.line == 2


def test_type_errors_at_resolve():
    script = parse_circuit("prep r : A*B = bell\nrun x = r")
    with pytest.raises(DslTypeError):
        resolve(script, QU, dims={"A": 2, "B": 3})
    script = parse_circuit("prep r : A = state5\nrun x = r")
    with pytest.raises(DslTypeError):
        resolve(script, QU, dims=2)
    script = parse_circuit("box s : A*B -> A*A = perm")
    with pytest.raises(DslTypeError):
        resolve(script, QU)
    script = parse_circuit("prep r : A\nrun x = r")
    with pytest.raises(DslTypeError):
        resolve(script, QU)
    script = parse_circuit("box u : A -> A = pauli1\nprep r : A = mixed\n"
                           "run x = r.u.u")
    bad = parse_circuit("prep r : A = pauli1")
    with pytest.raises(DslTypeError):
        resolve(bad, QU)
    # a prep consumed as if it had inputs
    frontier_bad = parse_circuit("prep r : A = mixed\neff a : A*A = unit\n"
                                 "run x = r.a")
    with pytest.raises(DslTypeError):
        resolve(frontier_bad, QU)


def test_dim_binding_by_first_appearance():
    script = parse_circuit(
        "prep x : A = mixed\nprep y : B = mixed\neff u : A*B = unit\n"
        "run both = x.y.u")
    res = resolve(script, QU, dims=(2, 3))
    assert res.bindings == {"A": 2, "B": 3}
    assert abs(evaluate(res.circuits["both"]) - 1.0) < 1e-12
    with pytest.raises(DslTypeError):
        resolve(script, QU, dims=(2, 3, 5))


def test_frozen_script_values():
    expected = {
        "swap.opc": {"p_hit": 1.0},
        "dense.opc": {"hit": 1.0, "miss": 0.0},
        "twirl_term.opc": {"total": 1.0},
        "measure.opc": {"wrong": 0.0, "right": 1.0},
        "interchange.opc": {"back": 1.0},
        "bits.opc": {"next": 1.0},
    }
    for name, runs in expected.items():
        with open(os.path.join(SCRIPT_DIR, name)) as f:
            script = parse_circuit(f.read())
        res = resolve(script, QU, dims=2)
        for run_name, want in runs.items():
            got = evaluate(res.circuits[run_name])
            assert abs(got - want) < 1e-12, (name, run_name)


def test_bits_script_is_theory_independent():
    with open(os.path.join(SCRIPT_DIR, "bits.opc")) as f:
        script = parse_circuit(f.read())
    for model in (CL, QU, RQ):
        res = resolve(script, model, dims=2)
        assert abs(evaluate(res.circuits["next"]) - 1.0) < 1e-12


def test_teleport_script_quantum():
    with open(os.path.join(SCRIPT_DIR, "teleport2.opc")) as f:
        script = parse_circuit(f.read())
    rng = np.random.default_rng(21)
    a = QU.system(2)
    phi = QU.pure_state(a, haar_state(2, rng))
    res = resolve(script, QU, dims=2, payloads={"phi": phi})
    total = np.zeros(4)
    for k in range(4):
        out = evaluate(res.circuits[f"branch{k}"])
        assert out.system == a
        # each branch delivers the input state at probability 1/4
        assert np.max(np.abs(out.coords - phi.coords / 4.0)) < 1e-12
        total = total + out.coords
    assert np.max(np.abs(total - phi.coords)) < 1e-12


def test_teleport_script_real_quantum():
    with open(os.path.join(SCRIPT_DIR, "teleport2.opc")) as f:
        script = parse_circuit(f.read())
    rng = np.random.default_rng(22)
    a = RQ.system(2)
    phi = RQ.random_pure_state(a, rng)
    res = resolve(script, RQ, dims=2, payloads={"phi": phi})
    for k in range(4):
        out = evaluate(res.circuits[f"branch{k}"])
        assert np.max(np.abs(out.coords - phi.coords / 4.0)) < 1e-12


def test_classical_teleport_script():
    with open(os.path.join(SCRIPT_DIR, "classical_tele.opc")) as f:
        script = parse_circuit(f.read())
    rng = np.random.default_rng(23)
    a = CL.system(2)
    p = CL.random_mixed_state(a, rng)
    res = resolve(script, CL, dims=2, payloads={"p": p})
    total = np.zeros(2)
    for k in range(2):
        out = evaluate(res.circuits[f"branch{k}"])
        assert np.max(np.abs(out.coords - p.coords / 2.0)) < 1e-12
        total = total + out.coords
    assert np.max(np.abs(total - p.coords)) < 1e-12


def test_real_quantum_rejects_complex_builtin():
    # pauli3 is the real matrix XZ at d=2 but a complex clock at d=3
    script = parse_circuit("prep r : A = mixed\nbox u : A -> A = pauli3\n"
                           "run x = r.u")
    resolve(script, RQ, dims=2)
    with pytest.raises(DslTypeError):
        resolve(script, RQ, dims=3)


def test_file_sources(tmp_path):
    a = QU.system(2)
    b = QU.system(2)
    plus = QU.pure_state(a, np.array([1.0, 1.0]) / np.sqrt(2))
    serialize.save(plus, str(tmp_path / "state_a.json"))
    p = 0.5
    kraus = (np.sqrt(1 - p) * np.eye(2, dtype=complex),
             np.sqrt(p) * np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex))
    doc = serialize.encode_kraus(a, b, kraus)
    with open(tmp_path / "channel_ab.json", "w") as f:
        f.write(serialize.canonical_json(doc))
    from purelab.theories import EffectVec
    det = EffectVec(b, QU.to_coords(b, np.diag([1.0, 0.0])))
    serialize.save(det, str(tmp_path / "effect_b.json"))

    with open(os.path.join(SCRIPT_DIR, "files.opc")) as f:
        script = parse_circuit(f.read())
    res = resolve(script, QU, dims=2, base_dir=str(tmp_path))
    got = evaluate(res.circuits["p_detect"])
    rho = apply_kraus(kraus, np.full((2, 2), 0.5, dtype=complex))
    assert abs(got - float(np.real(rho[0, 0]))) < 1e-12


def test_file_source_missing_and_mismatched(tmp_path):
    with open(os.path.join(SCRIPT_DIR, "files.opc")) as f:
        script = parse_circuit(f.read())
    with pytest.raises(DslTypeError):
        resolve(script, QU, dims=2, base_dir=str(tmp_path))
    # a payload whose system disagrees with the declared type
    a3 = QU.system(3)
    serialize.save(QU.invariant_state(a3), str(tmp_path / "state_a.json"))
    with pytest.raises(DslTypeError):
        resolve(script, QU, dims=2, base_dir=str(tmp_path))


def test_weyl_displacements():
    for d in (2, 3):
        for k in range(d * d):
            w = weyl(d, *divmod(k, d))
            assert np.max(np.abs(w @ w.conj().T - np.eye(d))) < 1e-12
    x = weyl(2, 1, 0)
    z = weyl(2, 0, 1)
    assert np.array_equal(np.real(x), np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(np.real(z), np.diag([1.0, -1.0]))
    assert np.max(np.abs(weyl(2, 1, 1) - x @ z)) < 1e-15
