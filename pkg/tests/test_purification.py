"""Purification, steering, dilation, and environment-channel checks."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from purelab.circuits import Test
from purelab.purification import (
    NotSameChannel,
    Purification,
    complementary_channel,
    connect_dilations,
    connect_purifications,
    dilate_test,
    equal_upon_input,
    purify,
    steer,
    steering_test,
    stinespring,
)
from purelab.theories import (
    EffectVec,
    LinearMap,
    PurificationUnsupported,
    StateVec,
    UnsupportedOperation,
    check_channel,
    classical_model,
    quantum_model,
    real_quantum_model,
    weyl,
)

QM = quantum_model()
RQ = real_quantum_model()
CL = classical_model()


def coeff_matrix(model, pure_state, h_a):
    """Reconstruct the amplitude matrix of a pure bipartite state."""
    m = model.from_coords(pure_state.system, pure_state.coords)
    vals, vecs = np.linalg.eigh(m)
    psi = np.sqrt(vals[-1]) * vecs[:, -1]
    return psi.reshape(h_a, -1)


def random_ensemble(model, system, rho, pieces, rng):
    """Split a state into `pieces` dominated cone elements summing to it."""
    h = system.hilbert_dim
    r = model.from_coords(system, rho.coords)
    vals, vecs = np.linalg.eigh(r)
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ np.conj(vecs).T
    gs = []
    for _ in range(pieces):
        g = rng.normal(size=(h, h)) + 1j * rng.normal(size=(h, h))
        gs.append(g @ np.conj(g).T)
    s = sum(gs)
    svals, svecs = np.linalg.eigh(s)
    s_isqrt = (svecs / np.sqrt(svals)) @ np.conj(svecs).T
    out = []
    for g in gs:
        tau = s_isqrt @ g @ s_isqrt
        sig = root @ tau @ root
        out.append(StateVec(system, model.to_coords(system, sig)))
    return out


# ---------------------------------------------------------------------------
# purification of states


def test_purify_random_mixed_states():
    rng = np.random.default_rng(11)
    for model in (QM, RQ):
        for d in (2, 3):
            sys_a = model.system(d)
            rho = model.random_mixed_state(sys_a, rng)
            pur = purify(model, rho)
            back = model.marginal(pur.pure_state, [0])
            assert np.max(np.abs(back.coords - rho.coords)) < 1e-10
            assert model.is_pure(pur.pure_state)
            assert pur.purifying.hilbert_dim == d
            unit = model.deterministic_effect(pur.purifying)
            assert abs(unit.pair(pur.complementary) - 1.0) < 1e-9


def test_purify_pure_state_needs_trivial_partner():
    rng = np.random.default_rng(4)
    sys_a = QM.system(3)
    psi = QM.random_pure_state(sys_a, rng)
    pur = purify(QM, psi)
    assert pur.purifying.hilbert_dim == 1


def test_purify_invariant_state_is_maximally_entangled():
    sys_a = QM.system(2)
    chi = QM.invariant_state(sys_a)
    pur = purify(QM, chi)
    assert QM.is_pure(pur.pure_state)
    # both marginals are the invariant state: equal Schmidt weights
    assert np.max(np.abs(pur.complementary.coords - chi.coords)) < 1e-12
    m = coeff_matrix(QM, pur.pure_state, 2)
    sv = np.linalg.svd(m, compute_uv=False)
    assert np.max(np.abs(sv - np.sqrt(0.5))) < 1e-12


def test_purify_pad_to_larger_partner():
    rng = np.random.default_rng(5)
    sys_a = QM.system(2)
    rho = QM.random_mixed_state(sys_a, rng)
    pur = purify(QM, rho, pad_to=4)
    assert pur.purifying.hilbert_dim == 4
    back = QM.marginal(pur.pure_state, [0])
    assert np.max(np.abs(back.coords - rho.coords)) < 1e-10


def test_purify_classical_mixed_unsupported():
    sys_c = CL.system(2)
    mixed = StateVec(sys_c, np.array([0.5, 0.5]))
    with pytest.raises(PurificationUnsupported):
        purify(CL, mixed)
    point = StateVec(sys_c, np.array([1.0, 0.0]))
    assert purify(CL, point).purifying.hilbert_dim == 1


# ---------------------------------------------------------------------------
# steering


def test_steering_reproduces_ensembles():
    rng = np.random.default_rng(21)
    sys_a = QM.system(3)
    rho = QM.random_mixed_state(sys_a, rng)
    pur = purify(QM, rho)
    ensemble = random_ensemble(QM, sys_a, rho, 4, rng)
    t = steering_test(QM, pur, ensemble)
    assert t.normalization_residual < 1e-9
    for i, member in enumerate(ensemble):
        got = steer(QM, pur, t.branches[i])
        assert np.max(np.abs(got.coords - member.coords)) < 1e-8


def test_steering_matches_closed_form_effects():
    rng = np.random.default_rng(22)
    sys_a = QM.system(2)
    rho = QM.random_mixed_state(sys_a, rng)
    pur = purify(QM, rho)
    ensemble = random_ensemble(QM, sys_a, rho, 3, rng)
    t = steering_test(QM, pur, ensemble)
    m = coeff_matrix(QM, pur.pure_state, 2)
    members = [QM.from_coords(sys_a, s.coords) for s in ensemble]
    want = oracles.steering_effects(m, members)
    for i, w in enumerate(want):
        got = QM.from_coords(pur.purifying, t.branches[i].coords)
        assert np.max(np.abs(got - w)) < 1e-8
        back = oracles.steer_to(m, got)
        assert np.max(np.abs(back - members[i])) < 1e-8


def test_steering_completion_lands_on_last_outcome():
    # rank-one state padded to a 2-level partner: the identity gap goes
    # to the final effect and the earlier ones stay support-confined
    sys_a = QM.system(2)
    psi = QM.pure_state(sys_a, np.array([1.0, 0.0]))
    pur = purify(QM, psi, pad_to=2)
    halves = [StateVec(sys_a, 0.5 * psi.coords) for _ in range(2)]
    t = steering_test(QM, pur, halves)
    b0 = QM.from_coords(pur.purifying, t.branches[0].coords)
    b1 = QM.from_coords(pur.purifying, t.branches[1].coords)
    assert np.max(np.abs(b0 + b1 - np.eye(2))) < 1e-12
    assert abs(np.trace(b0) - 0.5) < 1e-12   # untouched branch
    assert abs(np.trace(b1) - 1.5) < 1e-12   # completion absorbed here
    for i, member in enumerate(halves):
        got = steer(QM, pur, t.branches[i])
        assert np.max(np.abs(got.coords - member.coords)) < 1e-10


def test_steering_real_quantum():
    rng = np.random.default_rng(23)
    sys_a = RQ.system(2)
    rho = RQ.random_mixed_state(sys_a, rng)
    pur = purify(RQ, rho)
    half = StateVec(sys_a, 0.5 * rho.coords)
    t = steering_test(RQ, pur, [half, half])
    for i in range(2):
        got = steer(RQ, pur, t.branches[i])
        assert np.max(np.abs(got.coords - half.coords)) < 1e-8


def test_steering_rejects_bad_ensembles():
    rng = np.random.default_rng(24)
    sys_a = QM.system(2)
    rho = QM.random_mixed_state(sys_a, rng)
    pur = purify(QM, rho)
    short = [StateVec(sys_a, 0.25 * rho.coords)]
    with pytest.raises(ValueError, match="sum"):
        steering_test(QM, pur, short)
    other = QM.random_mixed_state(sys_a, np.random.default_rng(99))
    bad = [StateVec(sys_a, rho.coords - 0.3 * other.coords),
           StateVec(sys_a, 0.3 * other.coords)]
    if np.min(np.linalg.eigvalsh(
            QM.from_coords(sys_a, bad[0].coords))) < -1e-9:
        with pytest.raises(ValueError, match="dominated"):
            steering_test(QM, pur, bad)


def test_steering_classical_unsupported():
    sys_c = CL.system(2)
    point = StateVec(sys_c, np.array([1.0, 0.0]))
    pur = purify(CL, point)
    with pytest.raises(UnsupportedOperation):
        steering_test(CL, pur, [point])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_steering_two_member_splits(seed):
    rng = np.random.default_rng(seed)
    sys_a = QM.system(2)
    rho = QM.random_mixed_state(sys_a, rng)
    pur = purify(QM, rho)
    ensemble = random_ensemble(QM, sys_a, rho, 2, rng)
    t = steering_test(QM, pur, ensemble)
    for i in range(2):
        got = steer(QM, pur, t.branches[i])
        assert np.max(np.abs(got.coords - ensemble[i].coords)) < 1e-8


# ---------------------------------------------------------------------------
# equality upon input


def test_equal_upon_input_sees_only_the_support():
    sys_b = QM.system(3)
    rho = StateVec(sys_b, QM.to_coords(sys_b, np.diag([0.5, 0.5, 0.0])))
    ident = QM.identity_map(sys_b)
    phase = QM.unitary_channel(sys_b, np.diag([1.0, 1.0, 1.0j]))
    assert np.max(np.abs(ident.matrix - phase.matrix)) > 0.1
    assert equal_upon_input(QM, ident, phase, rho)
    assert not equal_upon_input(QM, ident, phase, QM.invariant_state(sys_b))


def test_equal_upon_input_classical():
    sys_c = CL.system(3)
    p = StateVec(sys_c, np.array([0.5, 0.5, 0.0]))
    ident = CL.identity_map(sys_c)
    mat = np.eye(3)
    mat[:, 2] = [0.5, 0.5, 0.0]
    fold = LinearMap(sys_c, sys_c, mat, tag="channel")
    assert equal_upon_input(CL, ident, fold, p)
    assert not equal_upon_input(CL, ident, fold, CL.invariant_state(sys_c))


def test_equal_upon_input_real_quantum_needs_kraus():
    sys_r = RQ.system(2)
    rho = StateVec(sys_r, RQ.to_coords(sys_r, np.diag([1.0, 0.0])))
    u1 = RQ.identity_map(sys_r)
    z = RQ.unitary_channel(sys_r, np.diag([1.0, -1.0]))
    assert equal_upon_input(RQ, u1, z, rho)
    assert not equal_upon_input(RQ, u1, z, RQ.invariant_state(sys_r))
    bare = LinearMap(sys_r, sys_r, z.matrix, tag="channel")
    with pytest.raises(UnsupportedOperation):
        equal_upon_input(RQ, u1, bare, rho)


def test_equal_upon_input_signature_guard():
    sys_a = QM.system(2)
    sys_b = QM.system(3)
    with pytest.raises(ValueError):
        equal_upon_input(QM, QM.identity_map(sys_a), QM.identity_map(sys_b),
                         QM.invariant_state(sys_a))


# ---------------------------------------------------------------------------
# isometric dilation of channels


def test_stinespring_unitary_has_unit_environment():
    rng = np.random.default_rng(31)
    sys_a = QM.system(3)
    u = QM.random_reversible(sys_a, rng)
    dil = stinespring(QM, u)
    assert dil.environment.hilbert_dim == 1
    assert dil.isometry_residual() < 1e-12
    assert dil.reduction_residual() < 1e-10


def test_stinespring_full_noise_needs_four_dimensions():
    sys_a = QM.system(2)
    kraus = tuple(weyl(2, k % 2, k // 2) / 2.0 for k in range(4))
    noise = QM.map_from_kraus(sys_a, sys_a, kraus, tag="channel")
    bare = LinearMap(sys_a, sys_a, noise.matrix, tag="channel")
    dil = stinespring(QM, bare)
    assert dil.environment.hilbert_dim == 4
    assert dil.isometry_residual() < 1e-12


def test_stinespring_amplitude_damping():
    sys_a = QM.system(2)
    ad = QM.map_from_kraus(sys_a, sys_a,
                           oracles.amplitude_damping_kraus(0.3),
                           tag="channel")
    dil = stinespring(QM, ad)
    assert dil.environment.hilbert_dim == 2
    assert dil.isometry_residual() < 1e-12
    assert dil.reduction_residual() < 1e-10


def test_stinespring_random_channels_reduce_back():
    rng = np.random.default_rng(32)
    for trial in range(50):
        d_in = int(rng.integers(2, 4))
        d_out = int(rng.integers(2, 4))
        sys_in, sys_out = QM.system(d_in), QM.system(d_out)
        ch = QM.random_channel(sys_in, sys_out, rng)
        dil = stinespring(QM, ch)
        assert dil.isometry_residual() < 1e-10
        assert dil.reduction_residual() < 1e-10
        lifted = dil.lifted_channel()
        assert check_channel(lifted, QM).kind == "channel"


def test_stinespring_rejects_non_channels():
    sys_a = QM.system(2)
    half = LinearMap(sys_a, sys_a, 0.5 * np.eye(4), tag="transformation")
    with pytest.raises(ValueError):
        stinespring(QM, half)


def test_stinespring_classical_unsupported():
    with pytest.raises(UnsupportedOperation):
        stinespring(CL, CL.identity_map(CL.system(2)))


def test_stinespring_real_quantum_needs_kraus():
    sys_r = RQ.system(2)
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    z = np.diag([1.0, -1.0])
    ch = RQ.map_from_kraus(sys_r, sys_r, (z / np.sqrt(2), x / np.sqrt(2)),
                           tag="channel")
    dil = stinespring(RQ, ch)
    assert dil.environment.hilbert_dim == 2
    assert dil.isometry_residual() < 1e-10
    bare = LinearMap(sys_r, sys_r, ch.matrix, tag="channel")
    with pytest.raises(UnsupportedOperation):
        stinespring(RQ, bare)


def test_reversible_form_extends_the_isometry():
    rng = np.random.default_rng(33)
    sys_a = QM.system(2)
    ad = QM.map_from_kraus(sys_a, sys_a,
                           oracles.amplitude_damping_kraus(0.3),
                           tag="channel")
    dil = stinespring(QM, ad)
    anc, phi0, rev = dil.reversible_form()
    assert rev.tag == "reversible"
    assert QM.is_pure(phi0)
    u = rev.kraus[0]
    assert np.max(np.abs(np.conj(u).T @ u - np.eye(4))) < 1e-10
    for _ in range(5):
        psi = oracles.haar_state(2, rng)
        lhs = u @ np.kron(psi, [1.0, 0.0])
        rhs = dil.isometry @ psi
        assert np.max(np.abs(lhs - rhs)) < 1e-10


# ---------------------------------------------------------------------------
# connecting dilations


def test_connect_dilations_recovers_a_planted_rotation():
    rng = np.random.default_rng(41)
    for trial in range(10):
        d = int(rng.integers(2, 4))
        sys_a = QM.system(d)
        ch = QM.random_channel(sys_a, sys_a, rng)
        d1 = stinespring(QM, ch)
        r = d1.environment.hilbert_dim
        w = oracles.haar_unitary(r, rng)
        mixed = tuple(sum(w[f, e] * d1.kraus[e] for e in range(r))
                      for f in range(r))
        ch2 = QM.map_from_kraus(sys_a, sys_a, mixed, tag="channel")
        d2 = stinespring(QM, ch2, minimal=False)
        link = connect_dilations(d1, d2)
        assert link.residual < 1e-8
        assert link.unitary is not None
        assert np.max(np.abs(link.unitary - w)) < 1e-8


def test_connect_dilations_unitary_connector_batch():
    rng = np.random.default_rng(42)
    for trial in range(50):
        d = int(rng.integers(2, 4))
        sys_a = QM.system(d)
        ch = QM.random_channel(sys_a, sys_a, rng)
        d1 = stinespring(QM, ch)
        r = d1.environment.hilbert_dim
        w = oracles.haar_unitary(r, rng)
        mixed = tuple(sum(w[f, e] * d1.kraus[e] for e in range(r))
                      for f in range(r))
        d2 = stinespring(QM, QM.map_from_kraus(sys_a, sys_a, mixed,
                                               tag="channel"), minimal=False)
        link = connect_dilations(d1, d2)
        assert link.residual < 1e-8
        u = link.unitary
        assert np.max(np.abs(np.conj(u).T @ u - np.eye(r))) < 1e-8


def test_connect_dilations_pads_smaller_environment():
    rng = np.random.default_rng(43)
    sys_a = QM.system(2)
    u = QM.random_reversible(sys_a, rng)
    d1 = stinespring(QM, u)
    padded = QM.map_from_kraus(sys_a, sys_a,
                               (u.kraus[0], np.zeros((2, 2))), tag="channel")
    d2 = stinespring(QM, padded, minimal=False)
    link = connect_dilations(d1, d2)
    assert link.residual < 1e-8
    assert link.unitary is None
    assert check_channel(link.channel, QM).kind == "channel"


def test_connect_dilations_flags_different_channels():
    rng = np.random.default_rng(44)
    sys_a = QM.system(2)
    c1 = QM.random_channel(sys_a, sys_a, rng)
    c2 = QM.random_channel(sys_a, sys_a, rng)
    with pytest.raises(NotSameChannel) as err:
        connect_dilations(stinespring(QM, c1), stinespring(QM, c2))
    assert err.value.distance > 1e-3


def test_connect_purifications():
    rng = np.random.default_rng(45)
    sys_a = QM.system(2)
    rho = QM.random_mixed_state(sys_a, rng)
    p1 = purify(QM, rho)
    w = oracles.haar_unitary(2, rng)
    m2 = coeff_matrix(QM, p1.pure_state, 2) @ w.T
    joint = QM.compose(sys_a, p1.purifying)
    psi2 = StateVec(joint, QM.to_coords(
        joint, np.outer(m2.reshape(-1), np.conj(m2.reshape(-1)))))
    p2 = Purification(rho, psi2, p1.purifying, QM.marginal(psi2, [1]))
    link = connect_purifications(QM, p1, p2)
    assert link.residual < 1e-8
    u = link.unitary
    assert np.max(np.abs(np.conj(u).T @ u - np.eye(2))) < 1e-8

    other = QM.random_mixed_state(sys_a, rng)
    p3 = purify(QM, other)
    with pytest.raises(NotSameChannel):
        connect_purifications(QM, p1, p3)


# ---------------------------------------------------------------------------
# environment channels


def test_complementary_of_amplitude_damping_swaps_the_rate():
    sys_a = QM.system(2)
    ad = QM.map_from_kraus(sys_a, sys_a,
                           oracles.amplitude_damping_kraus(0.3),
                           tag="channel")
    comp = complementary_channel(QM, ad)
    flipped = QM.map_from_kraus(sys_a, sys_a,
                                oracles.amplitude_damping_kraus(0.7),
                                tag="channel")
    assert np.max(np.abs(comp.matrix - flipped.matrix)) < 1e-12


def test_complementary_of_unitary_is_constant():
    rng = np.random.default_rng(51)
    sys_a = QM.system(2)
    u = QM.random_reversible(sys_a, rng)
    comp = complementary_channel(QM, u)
    assert comp.output.hilbert_dim == 1
    unit = QM.deterministic_effect(sys_a).coords
    assert np.max(np.abs(comp.matrix - unit.reshape(1, -1))) < 1e-10


def test_complementary_of_padded_identity_is_constant():
    rng = np.random.default_rng(52)
    sys_a = QM.system(2)
    padded = QM.map_from_kraus(sys_a, sys_a,
                               (np.eye(2), np.zeros((2, 2))), tag="channel")
    comp = complementary_channel(QM, padded)
    outs = []
    for _ in range(4):
        rho = QM.random_mixed_state(sys_a, rng)
        outs.append(comp.apply(rho).coords)
    for o in outs[1:]:
        assert np.max(np.abs(o - outs[0])) < 1e-10
    fixed = QM.from_coords(comp.output, outs[0])
    assert np.max(np.abs(fixed - np.diag([1.0, 0.0]))) < 1e-10


def test_complementary_real_quantum_pair():
    sys_r = RQ.system(2)
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    z = np.diag([1.0, -1.0])
    ch = RQ.map_from_kraus(sys_r, sys_r, (z / np.sqrt(2), x / np.sqrt(2)),
                           tag="channel")
    comp = complementary_channel(RQ, ch)
    assert check_channel(comp, RQ).kind == "channel"
    assert comp.output.hilbert_dim == 2


# ---------------------------------------------------------------------------
# dilation of tests


def test_dilate_test_basis_readout_instrument():
    sys_a = QM.system(2)
    branches = {i: QM.map_from_kraus(
        sys_a, sys_a, (np.outer(np.eye(2)[i], np.eye(2)[i]),))
        for i in range(2)}
    td = dilate_test(QM, Test(QM, branches))
    want = np.zeros((4, 2))
    want[0, 0] = 1.0   # |0>|0> <- |0>
    want[3, 1] = 1.0   # |1>|1> <- |1>
    assert np.max(np.abs(td.dilation.isometry - want)) < 1e-12
    for i in range(2):
        assert td.branch_residual(i) < 1e-8


def test_dilate_test_ancilla_readout_is_projective():
    rng = np.random.default_rng(61)
    sys_a = QM.system(2)
    ch = QM.random_channel(sys_a, sys_a, rng, kraus_count=3)
    groups = {0: ch.kraus[:1], 1: ch.kraus[1:]}
    branches = {o: QM.map_from_kraus(sys_a, sys_a, ks)
                for o, ks in groups.items()}
    td = dilate_test(QM, Test(QM, branches))
    env = td.dilation.environment
    mats = [QM.from_coords(env, td.ancilla_test.branches[o].coords)
            for o in td.ancilla_test.outcomes]
    for i, p in enumerate(mats):
        assert np.max(np.abs(p @ p - p)) < 1e-12
        for q in mats[i + 1:]:
            assert np.max(np.abs(p @ q)) < 1e-12
    assert np.max(np.abs(sum(mats) - np.eye(env.hilbert_dim))) < 1e-12
    for o in (0, 1):
        assert td.branch_residual(o) < 1e-8
    assert td.dilation.isometry_residual() < 1e-10


def test_dilate_test_povm_weights_are_input_independent():
    rng = np.random.default_rng(62)
    sys_a = QM.system(2)
    povm = Test(QM, {0: EffectVec(sys_a, QM.to_coords(sys_a, 0.3 * np.eye(2))),
                     1: EffectVec(sys_a, QM.to_coords(sys_a, 0.7 * np.eye(2)))})
    td = dilate_test(QM, povm)
    lifted = td.dilation.lifted_channel()
    n_out = len(td.dilation.channel.output.dims)
    for _ in range(5):
        rho = QM.random_mixed_state(sys_a, rng)
        joint = lifted.apply(rho)
        env_state = QM.marginal(
            joint, range(n_out, n_out + len(td.dilation.environment.dims)))
        w0 = td.ancilla_test.branches[0].pair(env_state)
        w1 = td.ancilla_test.branches[1].pair(env_state)
        assert abs(w0 - 0.3) < 1e-10
        assert abs(w1 - 0.7) < 1e-10


def test_dilate_test_observation_via_effect_branches():
    rng = np.random.default_rng(63)
    sys_a = QM.system(3)
    g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    pos = g @ np.conj(g).T
    pos = pos / (np.max(np.linalg.eigvalsh(pos)) * 1.5)
    povm = Test(QM, {
        "a": EffectVec(sys_a, QM.to_coords(sys_a, pos)),
        "b": EffectVec(sys_a, QM.to_coords(sys_a, np.eye(3) - pos))})
    td = dilate_test(QM, povm)
    for o in ("a", "b"):
        assert td.branch_residual(o) < 1e-8
    assert td.dilation.isometry_residual() < 1e-10


def test_dilate_test_real_quantum_and_classical():
    sys_r = RQ.system(2)
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    branches = {0: RQ.map_from_kraus(sys_r, sys_r, (np.eye(2) / np.sqrt(2),)),
                1: RQ.map_from_kraus(sys_r, sys_r, (x / np.sqrt(2),))}
    td = dilate_test(RQ, Test(RQ, branches))
    for o in (0, 1):
        assert td.branch_residual(o) < 1e-8
    with pytest.raises(UnsupportedOperation):
        ident = CL.identity_map(CL.system(2))
        dilate_test(CL, Test(CL, {0: ident}))
