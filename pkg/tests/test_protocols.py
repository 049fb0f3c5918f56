"""Twirling, teleportation, swapping, mirror maps, and programming."""

import numpy as np
import pytest

import oracles
from purelab.choi import faithful_pair
from purelab.metrology import state_distance, transformation_norm
from purelab.protocols import (
    bell_effects,
    bell_test,
    conjugate_reversible,
    dense_coding_table,
    deterministic_teleport,
    entanglement_swap,
    mirror_defect,
    pauli_twirl,
    programming_demo,
    transpose_reversible,
)
from purelab.theories import (
    LinearMap,
    UnsupportedOperation,
    classical_model,
    quantum_model,
    real_quantum_model,
)

QM = quantum_model()
RQ = real_quantum_model()
CL = classical_model()


# ---------------------------------------------------------------------------
# twirling


def test_qubit_twirl_is_uniform_displacement_mixture():
    tw = pauli_twirl(QM, 2)
    assert len(tw.maps) == 4
    assert all(abs(p - 0.25) < 1e-15 for p in tw.probabilities)
    assert tw.residual < 1e-12
    sys2 = QM.system(2)
    assert np.max(np.abs(tw.maps[0].matrix
                         - QM.identity_map(sys2).matrix)) < 1e-14
    # the shift-and-clock displacement conjugates like the y matrix
    y = np.array([[0, -1j], [1j, 0]])
    assert np.max(np.abs(tw.maps[3].matrix
                         - QM.unitary_channel(sys2, y).matrix)) < 1e-12
    z = np.diag([1.0, -1.0])
    assert np.max(np.abs(tw.maps[2].matrix
                         - QM.unitary_channel(sys2, z).matrix)) < 1e-12


def test_qutrit_twirl_has_nine_branches():
    tw = pauli_twirl(QM, 3)
    assert len(tw.maps) == 9
    assert tw.residual < 1e-12
    assert all(abs(p - 1 / 9) < 1e-15 for p in tw.probabilities)


def test_twirl_sends_every_state_to_the_invariant_one():
    rng = np.random.default_rng(3)
    tw = pauli_twirl(QM, 3)
    chi = QM.invariant_state(QM.system(3))
    for _ in range(5):
        rho = QM.random_mixed_state(QM.system(3), rng)
        out = tw.channel.apply(rho)
        assert np.max(np.abs(out.coords - chi.coords)) < 1e-12


def test_twirl_absorbs_reversible_maps_on_both_sides():
    rng = np.random.default_rng(4)
    tw = pauli_twirl(QM, 2)
    for _ in range(5):
        u = QM.random_reversible(QM.system(2), rng)
        assert np.max(np.abs((tw.channel @ u).matrix
                             - tw.channel.matrix)) < 1e-12
        assert np.max(np.abs((u @ tw.channel).matrix
                             - tw.channel.matrix)) < 1e-12


def test_classical_twirl_uses_the_cyclic_shifts():
    tw = pauli_twirl(CL, 4)
    assert len(tw.maps) == 4
    assert tw.residual < 1e-14
    assert np.max(np.abs(tw.maps[0].matrix - np.eye(4))) == 0.0
    t = tw.as_test()
    assert t.normalization_residual < 1e-12


def test_real_quantum_twirl_exists_only_where_displacements_are_real():
    tw = pauli_twirl(RQ, 2)
    assert tw.residual < 1e-12
    with pytest.raises(UnsupportedOperation):
        pauli_twirl(RQ, 3)


def test_twirl_as_test_coarse_grains_to_its_channel():
    tw = pauli_twirl(QM, 2)
    t = tw.as_test()
    assert t.normalization_residual < 1e-12
    total = t.total_map()
    assert np.max(np.abs(total.matrix - tw.channel.matrix)) < 1e-14


# ---------------------------------------------------------------------------
# the displaced entangled measurement


def test_bell_effects_are_atomic_and_resolve_the_unit():
    for d in (2, 3):
        effs = bell_effects(QM, d)
        assert len(effs) == d * d
        joint = QM.system(d, d)
        for e in effs:
            vals = np.linalg.eigvalsh(QM.from_coords(joint, e.coords))
            assert np.sum(vals > 1e-9) == 1
        total = sum(e.coords for e in effs)
        unit = QM.deterministic_effect(joint).coords
        assert np.max(np.abs(total - unit)) < 1e-12


def test_bell_test_normalizes():
    t = bell_test(QM, 2)
    assert len(t.outcomes) == 4
    assert t.normalization_residual < 1e-12


def test_bell_effects_need_a_matrix_model():
    with pytest.raises(UnsupportedOperation):
        bell_effects(CL, 2)


# ---------------------------------------------------------------------------
# deterministic teleportation


def test_qubit_teleportation_structure():
    run = deterministic_teleport(QM, 2)
    assert len(run.effects) == 4
    assert abs(sum(run.probabilities) - 1.0) < 1e-12
    for p in run.probabilities:
        assert abs(p - 0.25) < 1e-12
    assert max(run.residuals) < 1e-10
    assert run.effect_ranks == (1, 1, 1, 1)
    assert run.invariant_residual < 1e-10
    assert run.twirl_residual < 1e-10


def test_qutrit_teleportation_structure():
    run = deterministic_teleport(QM, 3)
    assert len(run.effects) == 9
    assert abs(sum(run.probabilities) - 1.0) < 1e-12
    for p in run.probabilities:
        assert abs(p - 1 / 9) < 1e-12
    assert max(run.residuals) < 1e-10
    assert all(r == 1 for r in run.effect_ranks)
    assert run.invariant_residual < 1e-10
    assert run.twirl_residual < 1e-10


def test_recovered_corrections_match_the_displacements():
    # the corrections are derived from the contraction alone; they must
    # come out as the displacement conjugations
    for d in (2, 3):
        run = deterministic_teleport(QM, d)
        for k, corr in enumerate(run.corrections):
            w = oracles.weyl(d, k % d, k // d)
            op = corr.kraus[0]
            assert abs(abs(np.trace(np.conj(w).T @ op)) / d - 1.0) < 1e-9


def test_teleportation_branches_against_contraction_oracle():
    rng = np.random.default_rng(11)
    for d in (2, 3):
        run = deterministic_teleport(QM, d)
        sys_d = QM.system(d)
        for _ in range(3):
            phi = oracles.haar_state(d, rng)
            state = QM.pure_state(sys_d, phi)
            for k in range(d * d):
                w = oracles.weyl(d, k % d, k // d)
                expect = (np.conj(w).T @ phi) / d
                got = QM.from_coords(sys_d,
                                     run.branches[k].apply(state).coords)
                assert np.max(np.abs(got - np.outer(expect,
                                                    np.conj(expect)))) < 1e-12


def test_corrected_instrument_coarse_grains_to_the_identity():
    run = deterministic_teleport(QM, 2)
    total = run.instrument(corrected=True).total_map()
    ident = QM.identity_map(QM.system(2))
    assert np.max(np.abs(total.matrix - ident.matrix)) < 1e-10
    raw = run.instrument().total_map()
    tw = pauli_twirl(QM, 2)
    assert np.max(np.abs(raw.matrix - tw.channel.matrix)) < 1e-10


def test_perturbing_any_correction_breaks_teleportation():
    rng = np.random.default_rng(5)
    run = deterministic_teleport(QM, 2)
    sys2 = QM.system(2)
    theta = 0.7
    extra = QM.unitary_channel(sys2, np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]))
    for k in range(4):
        bad = (extra @ run.corrections[k]) @ run.branches[k]
        worst = 0.0
        for _ in range(5):
            rho = QM.random_mixed_state(sys2, rng)
            gap = np.max(np.abs(bad.apply(rho).coords
                                - run.probabilities[k] * rho.coords))
            worst = max(worst, float(gap))
        assert worst >= 1e-3


def test_real_quantum_qubit_teleportation_works():
    run = deterministic_teleport(RQ, 2)
    assert len(run.effects) == 4
    for p in run.probabilities:
        assert abs(p - 0.25) < 1e-12
    assert max(run.residuals) < 1e-10
    assert run.twirl_residual < 1e-10


def test_teleportation_refusals():
    with pytest.raises(UnsupportedOperation):
        deterministic_teleport(CL, 2)
    with pytest.raises(UnsupportedOperation):
        deterministic_teleport(RQ, 3)


def test_dense_coding_is_exact():
    for d in (2, 3):
        table = dense_coding_table(QM, d)
        assert np.max(np.abs(table - np.eye(d * d))) < 1e-12


# ---------------------------------------------------------------------------
# entanglement swapping


def test_swap_on_the_canonical_pair():
    for d, p_want in ((2, 0.25), (3, 1 / 9)):
        fp = faithful_pair(QM, QM.system(d))
        res = entanglement_swap(QM, fp.state, fp=fp)
        assert abs(res.probability - p_want) < 1e-12
        assert res.residual < 1e-10
        assert np.max(np.abs(res.effect.coords
                             - fp.tele_effect.coords)) < 1e-12


def test_swap_effect_is_atomic():
    fp = faithful_pair(QM, QM.system(2))
    res = entanglement_swap(QM, fp.state, fp=fp)
    vals = np.linalg.eigvalsh(QM.from_coords(res.effect.system,
                                             res.effect.coords))
    assert np.sum(vals > 1e-9) == 1


def test_swap_against_amplitude_oracle():
    rng = np.random.default_rng(9)
    for _ in range(10):
        vec = oracles.haar_state(4, rng)
        psi = QM.pure_state(QM.system(2, 2), vec)
        res = entanglement_swap(QM, psi)
        amp = vec.reshape(2, 2)
        joint = QM.system(2, 2)
        f = QM.from_coords(joint, res.effect.coords)
        top = np.linalg.eigh(f)[1][:, -1].reshape(2, 2)
        out = np.einsum("ij,ja,ab->ib", amp, np.conj(top), amp).reshape(-1)
        got = QM.from_coords(joint, res.swapped.coords)
        assert np.max(np.abs(got - np.outer(out, np.conj(out)))) < 1e-12
        assert res.probability <= 0.25 + 1e-12
        assert res.residual < 1e-10


def test_swap_of_a_product_resource_is_certain():
    a = QM.system(2)
    psi = QM.embed_product(QM.pure_state(a, np.array([1.0, 0.0])),
                           QM.pure_state(a, np.array([0.6, 0.8])))
    res = entanglement_swap(QM, psi)
    assert abs(res.probability - 1.0) < 1e-9
    assert np.max(np.abs(res.swapped.coords - psi.coords)) < 1e-9


def test_real_quantum_swap_stays_under_the_coordinate_bound():
    fp = faithful_pair(RQ, RQ.system(2))
    res = entanglement_swap(RQ, fp.state, fp=fp)
    assert abs(res.probability - 0.25) < 1e-12
    assert res.probability < 1.0 / RQ.system(2).coord_dim


def test_swap_rejects_bad_resources():
    with pytest.raises(ValueError, match="pure"):
        entanglement_swap(QM, QM.invariant_state(QM.system(2, 2)))
    fp3 = faithful_pair(QM, QM.system(3))
    psi = faithful_pair(QM, QM.system(2)).state
    with pytest.raises(ValueError, match="pair systems"):
        entanglement_swap(QM, psi, fp=fp3)


# ---------------------------------------------------------------------------
# transposition and conjugation


def test_transpose_of_identity_and_of_x():
    fp = faithful_pair(QM, QM.system(2))
    sys2 = QM.system(2)
    ident = QM.identity_map(sys2)
    assert np.max(np.abs(transpose_reversible(QM, ident, fp).matrix
                         - ident.matrix)) < 1e-12
    x = QM.unitary_channel(sys2, np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.max(np.abs(transpose_reversible(QM, x, fp).matrix
                         - x.matrix)) < 1e-12


def test_transpose_reverses_composition_order():
    rng = np.random.default_rng(21)
    fp = faithful_pair(QM, QM.system(2))
    for _ in range(5):
        u1 = QM.random_reversible(QM.system(2), rng)
        u2 = QM.random_reversible(QM.system(2), rng)
        lhs = transpose_reversible(QM, u1 @ u2, fp)
        rhs = transpose_reversible(QM, u2, fp) @ transpose_reversible(
            QM, u1, fp)
        assert np.max(np.abs(lhs.matrix - rhs.matrix)) < 1e-11


def test_conjugate_undoes_the_transpose():
    rng = np.random.default_rng(22)
    fp = faithful_pair(QM, QM.system(2))
    ident = QM.identity_map(QM.system(2))
    for _ in range(5):
        u = QM.random_reversible(QM.system(2), rng)
        t = transpose_reversible(QM, u, fp)
        c = conjugate_reversible(QM, u, fp)
        assert np.max(np.abs((c @ t).matrix - ident.matrix)) < 1e-11


def test_holding_the_pair_fixed_for_many_reversible_maps():
    rng = np.random.default_rng(23)
    fp = faithful_pair(QM, QM.system(2))
    for _ in range(100):
        u = QM.random_reversible(QM.system(2), rng)
        conjugate_reversible(QM, u, fp, tol=1e-11)
        assert mirror_defect(QM, u, transpose_reversible(QM, u, fp),
                             fp) < 1e-11


def test_transpose_keeps_distinct_maps_apart():
    fp = faithful_pair(QM, QM.system(2))
    sys2 = QM.system(2)
    x = QM.unitary_channel(sys2, np.array([[0.0, 1.0], [1.0, 0.0]]))
    z = QM.unitary_channel(sys2, np.diag([1.0, -1.0]))
    tx = transpose_reversible(QM, x, fp)
    tz = transpose_reversible(QM, z, fp)
    stored_x = QM.lift_local(tx, fp.system, where="right").apply(fp.state)
    stored_z = QM.lift_local(tz, fp.system, where="right").apply(fp.state)
    dist = state_distance(QM, stored_x, stored_z)
    delta = LinearMap(sys2, sys2, tx.matrix - tz.matrix)
    lb = transformation_norm(QM, delta, budget=6, seed=0).lower_bound
    assert lb > 1e-3
    assert dist + 1e-9 >= fp.probability * lb


def test_transpose_rejects_irreversible_maps():
    fp = faithful_pair(QM, QM.system(2))
    rng = np.random.default_rng(24)
    noisy = QM.random_channel(QM.system(2), QM.system(2), rng)
    with pytest.raises(ValueError, match="reversible"):
        transpose_reversible(QM, noisy, fp)


# ---------------------------------------------------------------------------
# programming reversible maps


def test_orthogonal_programs_run_exactly():
    sys2 = QM.system(2)
    ident = QM.identity_map(sys2)
    x = QM.unitary_channel(sys2, np.array([[0.0, 1.0], [1.0, 0.0]]))
    rep = programming_demo(QM, [ident, x],
                           [QM.basis_state(sys2, 0), QM.basis_state(sys2, 1)])
    assert rep.exact
    assert rep.deficit < 1e-9
    rng = np.random.default_rng(31)
    rho = QM.random_mixed_state(sys2, rng)
    for prog, want in ((QM.basis_state(sys2, 0), ident),
                       (QM.basis_state(sys2, 1), x)):
        fed = QM.embed_product(rho, prog)
        out = QM.marginal(rep.retriever.apply(fed), [0])
        assert np.max(np.abs(out.coords - want.apply(rho).coords)) < 1e-9


def test_overlapping_programs_leave_a_deficit():
    sys2 = QM.system(2)
    ident = QM.identity_map(sys2)
    x = QM.unitary_channel(sys2, np.array([[0.0, 1.0], [1.0, 0.0]]))
    plus = QM.pure_state(sys2, np.array([1.0, 1.0]) / np.sqrt(2))
    rep = programming_demo(QM, [ident, x], [QM.basis_state(sys2, 0), plus],
                           rng=np.random.default_rng(0), restarts=50)
    assert not rep.exact
    assert rep.deficit > 0.01
    assert rep.fidelity <= 1.0


def test_single_program_is_trivially_exact():
    sys2 = QM.system(2)
    x = QM.unitary_channel(sys2, np.array([[0.0, 1.0], [1.0, 0.0]]))
    rep = programming_demo(QM, [x], [QM.basis_state(sys2, 0)])
    assert rep.exact
    assert rep.deficit < 1e-9


def test_programming_rejects_bad_input():
    sys2 = QM.system(2)
    x = QM.unitary_channel(sys2, np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError, match="per reversible map"):
        programming_demo(QM, [x], [])
    rng = np.random.default_rng(32)
    with pytest.raises(ValueError, match="pure"):
        programming_demo(QM, [x], [QM.random_mixed_state(sys2, rng)])
    with pytest.raises(UnsupportedOperation):
        programming_demo(CL, [x], [QM.basis_state(sys2, 0)])
