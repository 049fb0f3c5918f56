"""Structural certificates computed per theory model.

Each check turns one structural claim into numbers: uniqueness of the
normalization effect, dimension counting on composites, existence and
essential uniqueness of pure dilations, cloning obstructions, the
ceiling on perfectly distinguishable sets, and triviality of
non-disturbing instruments.  Verdicts carry the data needed to replay
them; the battery wires the checks together with per-check seeds so a
single integer reproduces the whole table.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from purelab.circuits import Test
from purelab.metrology import discriminate
from purelab.purification import purify, _coefficient_matrix
from purelab.theories import (
    CLASSICAL,
    QUANTUM,
    REAL_QUANTUM,
    LinearMap,
    PurificationUnsupported,
    StateVec,
    SystemLabel,
    TheoryModel,
    UnsupportedOperation,
    get_model,
)

CHECK_IDS = (
    "causality",
    "local_discriminability",
    "max_distinguishable",
    "no_cloning",
    "no_info_without_disturbance",
    "purification",
)
HEADLINE = ("causality", "local_discriminability", "purification",
            "no_cloning")
THEORY_ORDER = (QUANTUM, CLASSICAL, REAL_QUANTUM)


@dataclass(frozen=True)
class CheckResult:
    check: str
    verdict: str  # "holds" | "fails" | "cloneable" | "unsupported"
    evidence: dict
    seed_path: Tuple[int, ...]


@dataclass(frozen=True)
class AxiomReport:
    theory: str
    dims: Tuple[int, ...]
    results: Tuple[CheckResult, ...]

    def verdicts(self) -> dict:
        return {r.check: r.verdict for r in self.results}

    def result(self, check: str) -> CheckResult:
        for r in self.results:
            if r.check == check:
                return r
        raise KeyError(check)


def _rng_for(seed_path):
    return np.random.default_rng(np.random.SeedSequence(tuple(seed_path)))


def check_causality(model: TheoryModel, system: SystemLabel,
                    tol: float = 1e-9,
                    seed_path: Tuple[int, ...] = (0,)) -> CheckResult:
    """The unit effect must be the only functional giving 1 on every
    normalized state; decided by the rank of a spanning family."""
    rows = np.stack([s.coords for s in model.spanning_states(system)])
    e = model.deterministic_effect(system).coords
    resid = float(np.max(np.abs(rows @ e - 1.0)))
    sv = np.linalg.svd(rows, compute_uv=False)
    rank = int(np.sum(sv > 1e-9 * sv[0]))
    nullity = system.coord_dim - rank
    verdict = "holds" if nullity == 0 and resid <= tol else "fails"
    return CheckResult("causality", verdict,
                       {"coord_dim": int(system.coord_dim), "rank": rank,
                        "nullity": nullity,
                        "normalization_residual": resid},
                       tuple(seed_path))


def check_local_discriminability(model: TheoryModel, dim_a: int, dim_b: int,
                                 seed_path: Tuple[int, ...] = (0,),
                                 ) -> CheckResult:
    """Pair dimension versus product of part dimensions, as integers."""
    d_a = int(model.system(dim_a).coord_dim)
    d_b = int(model.system(dim_b).coord_dim)
    joint = int(model.system(dim_a, dim_b).coord_dim)
    product = d_a * d_b
    evidence = {"joint": joint, "product": product, "factors": [d_a, d_b]}
    if joint == product:
        return CheckResult("local_discriminability", "holds", evidence,
                           tuple(seed_path))
    evidence["witness"] = [joint, product]
    return CheckResult("local_discriminability", "fails", evidence,
                       tuple(seed_path))


def _classical_purification_witness(model, system):
    """Every pure state of a pair is a product of pure marginals, so a
    mixed state cannot appear as a marginal of any pure state."""
    n = system.coord_dim
    joint = model.compose(system, system)
    mixed = model.invariant_state(system)
    gap = np.inf
    count = 0
    for k in range(joint.coord_dim):
        point = np.zeros(joint.coord_dim)
        point[k] = 1.0
        marg = model.marginal(StateVec(joint, point), range(len(system.dims)))
        assert model.is_pure(marg)
        gap = min(gap, float(np.max(np.abs(marg.coords - mixed.coords))))
        count += 1
    refused = False
    try:
        model.purify(mixed)
    except PurificationUnsupported:
        refused = True
    return {"composite_pure_count": count, "marginal_gap": float(gap),
            "purify_refused": refused}


def check_purification(model: TheoryModel, system: SystemLabel,
                       samples: int = 50, tol: float = 1e-8,
                       seed_path: Tuple[int, ...] = (0,)) -> CheckResult:
    """Random mixed states must have pure dilations, and two dilations
    of equal size must be related by a reversible map on the dilating
    factor, recovered here from the coefficient matrices."""
    if samples < 1:
        raise ValueError("at least one sample is needed")
    if model.theory == CLASSICAL:
        return CheckResult("purification", "fails",
                           _classical_purification_witness(model, system),
                           tuple(seed_path))
    rng = _rng_for(seed_path)
    n_sys = len(system.dims)
    worst_marginal = worst_connection = worst_orthogonality = 0.0
    for _ in range(samples):
        rho = model.random_mixed_state(system, rng)
        p1 = purify(model, rho)
        assert model.is_pure(p1.pure_state)
        back = model.marginal(p1.pure_state, range(n_sys))
        worst_marginal = max(worst_marginal,
                             float(np.max(np.abs(back.coords - rho.coords))))
        rev = model.random_reversible(p1.purifying, rng)
        second = model.lift_local(rev, system, where="right").apply(
            p1.pure_state)
        m1 = _coefficient_matrix(model, p1.pure_state, n_sys)
        m2 = _coefficient_matrix(model, second, n_sys)
        if model.real_carrier:
            m1, m2 = np.real(m1), np.real(m2)
        u_, _, vt_ = np.linalg.svd(np.linalg.pinv(m1) @ m2)
        conn = u_ @ vt_
        worst_connection = max(worst_connection,
                               float(np.max(np.abs(m1 @ conn - m2))))
        worst_orthogonality = max(
            worst_orthogonality,
            float(np.max(np.abs(np.conj(conn).T @ conn
                                - np.eye(conn.shape[0])))))
    evidence = {"samples": int(samples),
                "worst_marginal": worst_marginal,
                "worst_connection": worst_connection,
                "worst_orthogonality": worst_orthogonality}
    ok = max(worst_marginal, worst_connection, worst_orthogonality) <= tol
    return CheckResult("purification", "holds" if ok else "fails",
                       evidence, tuple(seed_path))


def pure_spanning_states(model: TheoryModel, system: SystemLabel):
    """A deterministic pure family whose coordinates span the state
    space: basis vectors plus balanced two-level superpositions."""
    if model.theory == CLASSICAL:
        return [StateVec(system, row) for row in np.eye(system.coord_dim)]
    h = system.hilbert_dim
    eye = np.eye(h, dtype=float if model.real_carrier else complex)
    vecs = [eye[:, j] for j in range(h)]
    for j in range(h):
        for k in range(j + 1, h):
            vecs.append((eye[:, j] + eye[:, k]) / np.sqrt(2.0))
            if not model.real_carrier:
                vecs.append((eye[:, j] + 1j * eye[:, k]) / np.sqrt(2.0))
    return [model.pure_state(system, v) for v in vecs]


def check_no_cloning(model: TheoryModel, system: SystemLabel,
                     states: Optional[Sequence[StateVec]] = None,
                     tol: float = 1e-9,
                     seed_path: Tuple[int, ...] = (0,)) -> CheckResult:
    """Copying a family is exactly as hard as telling its members apart,
    so the verdict comes from pairwise discrimination over a spanning
    pure family."""
    if states is None:
        states = pure_spanning_states(model, system)
    states = list(states)
    stack = np.stack([s.coords for s in states])
    rank = int(np.linalg.matrix_rank(stack, tol=1e-9))
    if len(states) == 1:
        return CheckResult("no_cloning", "cloneable",
                           {"set_size": 1, "spanning_rank": rank,
                            "reason": "constant-preparation"},
                           tuple(seed_path))
    min_p, pair = np.inf, (0, 1)
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            p = discriminate(model, states[i], states[j]).p_success
            if p < min_p:
                min_p, pair = p, (i, j)
    evidence = {"set_size": len(states), "spanning_rank": rank,
                "min_pair_success": float(min_p),
                "witness_pair": [int(pair[0]), int(pair[1])]}
    if min_p < 1.0 - tol:
        return CheckResult("no_cloning", "holds", evidence, tuple(seed_path))
    return CheckResult("no_cloning", "cloneable", evidence, tuple(seed_path))


def check_max_distinguishable(model: TheoryModel, system: SystemLabel,
                              budget: int = 50,
                              seed_path: Tuple[int, ...] = (0,),
                              ) -> CheckResult:
    """Grow a perfectly distinguishable pure family greedily and compare
    its size with the coordinate dimension."""
    d_coord = int(system.coord_dim)
    if model.theory == CLASSICAL:
        found = d_coord  # the vertices themselves
        verdict = "holds" if found < d_coord else "fails"
        return CheckResult("max_distinguishable", verdict,
                           {"found": found, "coord_dim": d_coord,
                            "min_pair_success": 1.0},
                           tuple(seed_path))
    rng = _rng_for(seed_path)
    h = system.hilbert_dim
    vecs = []
    draws = 0
    while len(vecs) < h and draws < budget:
        draws += 1
        g = rng.normal(size=h)
        if not model.real_carrier:
            g = g + 1j * rng.normal(size=h)
        for v in vecs:
            g = g - np.vdot(v, g) * v
        norm = np.linalg.norm(g)
        if norm < 1e-6:
            continue
        vecs.append(g / norm)
    states = [model.pure_state(system, v) for v in vecs]
    min_p = 1.0
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            min_p = min(min_p, discriminate(model, states[i],
                                            states[j]).p_success)
    found = len(states)
    ok = found < d_coord and min_p >= 1.0 - 1e-9
    return CheckResult("max_distinguishable", "holds" if ok else "fails",
                       {"found": found, "coord_dim": d_coord,
                        "min_pair_success": float(min_p), "draws": draws},
                       tuple(seed_path))


def check_no_info_without_disturbance(model: TheoryModel, instrument,
                                      tol: float = 1e-8,
                                      seed_path: Tuple[int, ...] = (0,),
                                      ) -> CheckResult:
    """A non-disturbing instrument must have every branch proportional
    to the identity; an informative branch is the failure witness."""
    if isinstance(instrument, Test):
        branches = [instrument.branch_map(o) for o in instrument.outcomes]
    else:
        branches = list(instrument)
    if not branches:
        raise ValueError("an instrument needs at least one branch")
    system = branches[0].input
    for b in branches:
        if b.input != system or b.output != system:
            raise ValueError("instrument branches must share one system")
    d_coord = system.coord_dim
    total = sum(b.matrix for b in branches)
    disturbance = float(np.max(np.abs(total - np.eye(d_coord))))
    if disturbance > 1e-9:
        raise ValueError(
            f"instrument is not non-disturbing: total drifts from the "
            f"identity by {disturbance:.3e}")
    eye = np.eye(d_coord).ravel()
    gaps, weights = [], []
    for b in branches:
        flat = b.matrix.ravel()
        overlap = float(np.real(np.vdot(eye, flat))) / d_coord
        scale = np.linalg.norm(flat) * np.linalg.norm(eye)
        gaps.append(1.0 - abs(np.vdot(eye, flat)) / scale)
        weights.append(overlap)
    worst = int(np.argmax(gaps))
    evidence = {"branch_alignment_gaps": [float(g) for g in gaps],
                "probabilities": [float(w) for w in weights],
                "disturbance": disturbance}
    if gaps[worst] < tol:
        return CheckResult("no_info_without_disturbance", "holds",
                           evidence, tuple(seed_path))
    evidence["witness_branch"] = worst
    return CheckResult("no_info_without_disturbance", "fails", evidence,
                       tuple(seed_path))


def _battery_instrument(model: TheoryModel, system: SystemLabel):
    if model.theory == CLASSICAL:
        # read the basis and reprepare it: non-disturbing yet informative
        n = system.coord_dim
        return [LinearMap(system, system, np.outer(np.eye(n)[:, i],
                                                   np.eye(n)[:, i]),
                          tag="transformation") for i in range(n)]
    ident = model.identity_map(system)
    return [LinearMap(system, system, w * ident.matrix,
                      tag="transformation") for w in (0.3, 0.7)]


def run_battery(theories: Sequence[str] = THEORY_ORDER,
                dims: Tuple[int, ...] = (2, 2), samples: int = 50,
                seed: int = 0) -> Tuple[AxiomReport, ...]:
    """All checks over all requested theories, deterministically seeded
    per (theory, check)."""
    dims = tuple(int(d) for d in dims)
    dim_a = dims[0]
    dim_b = dims[1] if len(dims) > 1 else dims[0]
    reports = []
    for theory in theories:
        model = get_model(theory)
        system = model.system(dim_a)
        t_ix = THEORY_ORDER.index(theory)
        paths = {c: (seed, t_ix, i) for i, c in enumerate(CHECK_IDS)}
        results = [
            check_causality(model, system, seed_path=paths["causality"]),
            check_local_discriminability(
                model, dim_a, dim_b,
                seed_path=paths["local_discriminability"]),
            check_max_distinguishable(
                model, system, seed_path=paths["max_distinguishable"]),
            check_no_cloning(model, system,
                             seed_path=paths["no_cloning"]),
            check_no_info_without_disturbance(
                model, _battery_instrument(model, system),
                seed_path=paths["no_info_without_disturbance"]),
            check_purification(model, system, samples=samples,
                               seed_path=paths["purification"]),
        ]
        results.sort(key=lambda r: r.check)
        reports.append(AxiomReport(theory, dims, tuple(results)))
    return tuple(reports)


def verdict_matrix(reports: Sequence[AxiomReport]) -> dict:
    """The four headline verdicts per theory."""
    return {r.theory: {c: r.verdicts()[c] for c in HEADLINE}
            for r in reports}


def battery_doc(reports: Sequence[AxiomReport], seed: int = 0) -> dict:
    return {
        "seed": int(seed),
        "reports": [
            {"theory": r.theory, "dims": list(r.dims),
             "checks": [
                 {"check": c.check, "verdict": c.verdict,
                  "seed_path": list(c.seed_path), "evidence": c.evidence}
                 for c in r.results]}
            for r in reports],
    }


def battery_markdown(reports: Sequence[AxiomReport]) -> str:
    lines = ["| theory | " + " | ".join(CHECK_IDS) + " |",
             "|" + "---|" * (len(CHECK_IDS) + 1)]
    for r in reports:
        v = r.verdicts()
        cells = []
        for c in CHECK_IDS:
            cell = v[c]
            witness = r.result(c).evidence.get("witness")
            if witness is not None:
                cell += f" ({witness[0]} vs {witness[1]})"
            cells.append(cell)
        lines.append("| " + r.theory + " | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
