import numpy as np
import pytest

from purelab.circuits import (
    Box,
    Circuit,
    Test,
    WiringError,
    as_map,
    compose_par,
    compose_seq,
    evaluate,
    identity_test,
)
from purelab.theories import (
    EffectVec,
    LinearMap,
    StateVec,
    classical_model,
    quantum_model,
    real_quantum_model,
)

from oracles import apply_kraus

CL = classical_model(2)
QU = quantum_model(2)
RQ = real_quantum_model(2)


def _prep(model, state, name="r"):
    return Circuit.from_payload(model, name, state)


def _box(model, m, name="C"):
    return Circuit.from_payload(model, name, m)


def _eff(model, effect, name="a"):
    return Circuit.from_payload(model, name, effect)


def test_scalar_chain_equals_pairing():
    a = QU.system(2)
    rho = QU.random_mixed_state(a, np.random.default_rng(0))
    eff = QU.deterministic_effect(a)
    c = compose_seq(_prep(QU, rho), _eff(QU, eff))
    assert abs(evaluate(c) - eff.pair(rho)) == 0.0


def test_unit_effect_on_invariant_state():
    a = QU.system(2)
    c = compose_seq(_prep(QU, QU.invariant_state(a)),
                    _eff(QU, QU.deterministic_effect(a)))
    assert abs(evaluate(c) - 1.0) < 1e-15


def test_parallel_identities_compose_to_identity():
    a, b = QU.system(2), QU.system(3)
    c = compose_par(_box(QU, QU.identity_map(a)),
                    _box(QU, QU.identity_map(b)))
    got = evaluate(c)
    joint = QU.compose(a, b)
    assert np.array_equal(got.matrix, QU.identity_map(joint).matrix)


def test_bell_with_correlated_basis_effects():
    a = QU.system(2)
    joint = QU.compose(a, a)
    bell = QU.pure_state(joint, np.array([1.0, 0, 0, 1.0]) / np.sqrt(2))
    for i in range(2):
        for j in range(2):
            m = np.zeros((4, 4))
            m[2 * i + j, 2 * i + j] = 1.0
            eff = EffectVec(joint, QU.to_coords(joint, m))
            c = compose_seq(_prep(QU, bell), _eff(QU, eff))
            want = 0.5 if i == j else 0.0
            assert abs(evaluate(c) - want) < 1e-14


def test_bitflip_channel_example():
    a = QU.system(2)
    p = 0.25
    kraus = (np.sqrt(1 - p) * np.eye(2, dtype=complex),
             np.sqrt(p) * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex))
    flip = QU.map_from_kraus(a, a, kraus, tag="channel")
    rho0 = np.zeros((2, 2), dtype=complex)
    rho0[0, 0] = 1.0
    out = apply_kraus(kraus, rho0)
    one = EffectVec(a, QU.to_coords(a, np.diag([0.0, 1.0])))
    c = compose_seq(compose_seq(_prep(QU, QU.basis_state(a, 0)),
                                _box(QU, flip)),
                    _eff(QU, one))
    assert abs(evaluate(c) - 0.25) < 1e-14
    assert abs(evaluate(c) - float(np.real(out[1, 1]))) < 1e-14


def test_interchange_law():
    rng = np.random.default_rng(7)
    a = QU.system(2)
    for _ in range(100):
        c1, d1 = QU.random_channel(a, a, rng), QU.random_channel(a, a, rng)
        c2, d2 = QU.random_channel(a, a, rng), QU.random_channel(a, a, rng)
        left = compose_seq(compose_par(_box(QU, c1, "c1"), _box(QU, c2, "c2")),
                           compose_par(_box(QU, d1, "d1"), _box(QU, d2, "d2")))
        right = compose_par(compose_seq(_box(QU, c1, "c1"), _box(QU, d1, "d1")),
                            compose_seq(_box(QU, c2, "c2"), _box(QU, d2, "d2")))
        gap = np.max(np.abs(evaluate(left).matrix - evaluate(right).matrix))
        assert gap < 1e-11


def test_identity_absorption_exact():
    rng = np.random.default_rng(8)
    a = QU.system(2)
    ch = QU.random_channel(a, a, rng)
    base = _box(QU, ch)
    wrapped = compose_seq(compose_seq(_box(QU, QU.identity_map(a)), base),
                          _box(QU, QU.identity_map(a)))
    assert np.array_equal(evaluate(wrapped).matrix, evaluate(base).matrix)


def test_evaluation_order_independence():
    rng = np.random.default_rng(9)
    a = QU.system(2)
    left = compose_seq(_prep(QU, QU.random_mixed_state(a, rng)),
                       _box(QU, QU.random_channel(a, a, rng)))
    right = compose_seq(_prep(QU, QU.random_mixed_state(a, rng)),
                        _box(QU, QU.random_channel(a, a, rng)))
    c = compose_par(left, right)
    import itertools
    results = []
    for order in itertools.permutations(range(len(c.boxes))):
        try:
            results.append(evaluate(c, order=order).coords)
        except WiringError:
            continue
    assert len(results) > 1
    for r in results[1:]:
        assert np.max(np.abs(r - results[0])) < 1e-12


def test_open_circuit_returns_effect():
    a = QU.system(2)
    ch = QU.random_channel(a, a, np.random.default_rng(10))
    c = compose_seq(_box(QU, ch), _eff(QU, QU.deterministic_effect(a)))
    got = evaluate(c)
    want = QU.deterministic_effect(a).coords @ ch.matrix
    assert np.max(np.abs(got.coords - want)) < 1e-14


def test_wiring_error_reports_wires():
    a, b = QU.system(2), QU.system(3)
    with pytest.raises(WiringError) as exc:
        compose_seq(_prep(QU, QU.invariant_state(a)),
                    _eff(QU, QU.deterministic_effect(b)))
    assert exc.value.wires


def test_cycle_detected():
    a = QU.system(2)
    box = Box("loop", "map", QU.identity_map(a), (0,), (0,))
    with pytest.raises(WiringError):
        Circuit(QU, (box,), {0: 2}, (), ())


def test_pass_through_wire():
    a = QU.system(2)
    rho = QU.random_mixed_state(a, np.random.default_rng(11))
    box = Box("r", "prep", as_map(QU, rho), (), (1,))
    c = Circuit(QU, (box,), {0: 2, 1: 2}, (0,), (0, 1))
    got = evaluate(c)
    want = QU.lift_local(as_map(QU, rho), a, where="right")
    assert np.max(np.abs(got.matrix - want.matrix)) < 1e-14


def test_classical_and_real_quantum_circuits():
    for model in (CL, RQ):
        a = model.system(2)
        c = compose_seq(_prep(model, model.invariant_state(a)),
                        _eff(model, model.deterministic_effect(a)))
        assert abs(evaluate(c) - 1.0) < 1e-12


def test_real_quantum_two_wire_circuit():
    a = RQ.system(2)
    rng = np.random.default_rng(12)
    rho = RQ.random_mixed_state(a, rng)
    sigma = RQ.random_mixed_state(a, rng)
    c = compose_seq(
        compose_par(_prep(RQ, rho, "r"), _prep(RQ, sigma, "s")),
        _eff(RQ, RQ.deterministic_effect(RQ.system(2, 2)), "e"))
    assert abs(evaluate(c) - 1.0) < 1e-10


# ---------------------------------------------------------------------------
# tests over outcome families


def test_test_normalization_enforced():
    a = QU.system(2)
    half = LinearMap(a, a, 0.5 * np.eye(4), tag="transformation")
    Test(QU, {0: half, 1: half})
    with pytest.raises(ValueError):
        Test(QU, {0: half})


def test_observation_test_and_coarse_grain():
    a = QU.system(2)
    effs = {i: EffectVec(a, QU.to_coords(a, m))
            for i, m in enumerate((np.diag([1.0, 0.0]), np.diag([0.0, 1.0])))}
    t = Test(QU, effs)
    assert t.kind == "effect"
    merged = t.coarse_grain({"all": (0, 1)})
    e = QU.deterministic_effect(a).coords
    got = merged.branch_map("all").matrix[0, :]
    assert np.max(np.abs(got - e)) < 1e-12


def test_conditioned_test_composes():
    a = QU.system(2)
    rng = np.random.default_rng(13)
    u0, u1 = QU.random_reversible(a, rng), QU.random_reversible(a, rng)
    half = 0.5
    first = Test(QU, {0: LinearMap(a, a, half * u0.matrix, "transformation"),
                      1: LinearMap(a, a, half * u1.matrix, "transformation")})
    follow = {0: identity_test(QU, a),
              1: Test(QU, {"f": QU.random_channel(a, a, rng)})}
    cond = first.condition(follow)
    assert set(cond.outcomes) == {(0, "id"), (1, "f")}
    got = cond.branch_map((1, "f")).matrix
    want = follow[1].branch_map("f").matrix @ first.branch_map(1).matrix
    assert np.max(np.abs(got - want)) < 1e-14


def test_prep_test_normalization():
    a = QU.system(2)
    rng = np.random.default_rng(14)
    rho = QU.random_mixed_state(a, rng)
    halves = {i: StateVec(a, 0.5 * rho.coords) for i in range(2)}
    t = Test(QU, halves)
    assert t.kind == "prep"
    with pytest.raises(ValueError):
        Test(QU, {0: rho, 1: rho})
