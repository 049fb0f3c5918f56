"""Purification, steering, and reversible dilation machinery.

States lift to pure bipartite states over a purifying system; channels
lift to isometries into an environment. Both lifts are unique up to a
reversible map on the added system, and the connecting map is computed
explicitly. Observation and instrument tests dilate to an isometry
followed by a projective readout on the environment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from purelab.circuits import Test, state_as_map
from purelab.theories import (
    CLASSICAL,
    DEFAULT_TOL,
    QUANTUM,
    RANK_FLOOR,
    EffectVec,
    LinearMap,
    StateVec,
    SystemLabel,
    TheoryModel,
    UnsupportedOperation,
    check_channel,
    choi_matrix,
)


class NotSameChannel(Exception):
    """Two dilations reduce to different channels; carries the distance."""

    def __init__(self, message: str, distance: float):
        super().__init__(message)
        self.distance = distance


# ---------------------------------------------------------------------------
# purification of states


@dataclass(frozen=True)
class Purification:
    original: StateVec
    pure_state: StateVec   # on system (x) purifying
    purifying: SystemLabel
    complementary: StateVec  # marginal on the purifying system


def purify(model: TheoryModel, state: StateVec,
           pad_to: Optional[int] = None,
           tol: float = 1e-10) -> Purification:
    """A pure state on system (x) purifying whose first marginal is the
    input. Classical mixed states raise PurificationUnsupported."""
    psi, tilde = model.purify(state, pad_to=pad_to)
    back = model.marginal(psi, range(len(state.system.dims)))
    resid = float(np.max(np.abs(back.coords - state.coords)))
    if resid > tol:
        raise AssertionError(f"purification marginal off by {resid:.2e}")
    n = len(state.system.dims)
    comp = model.marginal(psi, range(n, n + len(tilde.dims)))
    return Purification(state, psi, tilde, comp)


def _coefficient_matrix(model: TheoryModel, pure: StateVec,
                        split: int) -> np.ndarray:
    """Amplitude matrix M of a pure bipartite state: psi = sum M_ij |i>|j>."""
    m = model.from_coords(pure.system, pure.coords)
    vals, vecs = np.linalg.eigh(m)
    top = int(np.argmax(vals))
    if vals[top] <= 0:
        raise ValueError("not a nonzero state")
    psi = np.sqrt(vals[top]) * vecs[:, top]
    dims = pure.system.dims
    h_a = 1
    for d in dims[:split]:
        h_a *= d
    return psi.reshape(h_a, -1)


def steering_test(model: TheoryModel, purification: Purification,
                  ensemble: Sequence[StateVec], tol: float = DEFAULT_TOL
                  ) -> Test:
    """An observation test on the purifying system steering each member
    of the ensemble: pairing outcome i on the purifying side leaves the
    subnormalized state ensemble[i] on the original system.

    The ensemble must consist of cone elements dominated by the original
    state and summing to it.
    """
    if model.theory == CLASSICAL:
        raise UnsupportedOperation("steering needs entangled pure states")
    rho = purification.original
    total = sum(s.coords for s in ensemble)
    gap = float(np.max(np.abs(total - rho.coords)))
    if gap > tol:
        raise ValueError(f"ensemble does not sum to the state: off by {gap:.2e}")
    rho_m = model.from_coords(rho.system, rho.coords)
    scale = max(1.0, float(np.max(np.abs(rho_m))))
    for i, s in enumerate(ensemble):
        diff = rho_m - model.from_coords(s.system, s.coords)
        if float(np.min(np.linalg.eigvalsh(diff))) < -tol * scale:
            raise ValueError(f"ensemble member {i} is not dominated "
                             "by the state")

    split = len(rho.system.dims)
    m = _coefficient_matrix(model, purification.pure_state, split)
    pinv = np.linalg.pinv(m, rcond=1e-12)
    d_t = purification.purifying.hilbert_dim
    effects = []
    for s in ensemble:
        sig = model.from_coords(s.system, s.coords)
        bt = pinv @ sig @ np.conj(pinv).T
        effects.append(bt.T)
    completion = np.eye(d_t) - sum(effects)
    effects[-1] = effects[-1] + completion
    branches = {}
    for i, b in enumerate(effects):
        coords = model.to_coords(purification.purifying,
                                 0.5 * (b + np.conj(b).T))
        branches[i] = EffectVec(purification.purifying, coords)
    return Test(model, branches)


def steer(model: TheoryModel, purification: Purification,
          effect: EffectVec) -> StateVec:
    """The subnormalized state left on the original system when the
    purifying side answers the given effect."""
    split = len(purification.original.system.dims)
    m = _coefficient_matrix(model, purification.pure_state, split)
    b = model.from_coords(purification.purifying, effect.coords)
    out = m @ b.T @ np.conj(m).T
    sys_a = purification.original.system
    return StateVec(sys_a, model.to_coords(sys_a, out))


def connect_purifications(model: TheoryModel, p1: Purification,
                          p2: Purification, tol: float = 1e-8):
    """The channel on the purifying system carrying one purification of a
    state onto another; a unitary when the purifying systems match in
    size. Returns (channel, unitary-or-None)."""
    d1 = _prep_dilation(model, p1)
    d2 = _prep_dilation(model, p2)
    return connect_dilations(d1, d2, tol=tol)


# ---------------------------------------------------------------------------
# equality upon input


def equal_upon_input(model: TheoryModel, m1: LinearMap, m2: LinearMap,
                     state: StateVec, tol: float = DEFAULT_TOL) -> bool:
    """Whether two transformations agree on everything steerable from the
    given state: their local actions on a purification coincide.

    Classically the check runs over the support outcomes. In the
    real-quantum model the criterion needs concrete Kraus realizations
    on both maps (the reversible and channel cases); without them the
    check is unsupported rather than silently wrong.
    """
    if m1.input != m2.input or m1.output != m2.output:
        raise ValueError("maps must share input and output systems")
    if m1.input != state.system:
        raise ValueError("state lives on the wrong system")

    if model.theory == CLASSICAL:
        support = np.flatnonzero(state.coords > RANK_FLOOR)
        gap = m1.matrix[:, support] - m2.matrix[:, support]
        return float(np.max(np.abs(gap), initial=0.0)) <= tol

    if model.theory != QUANTUM and (m1.kraus is None or m2.kraus is None):
        raise UnsupportedOperation(
            "real-quantum equality upon input needs Kraus realizations "
            "for both maps")
    pur = purify(model, state)
    lifted1 = model.lift_local(m1, pur.purifying, where="left")
    lifted2 = model.lift_local(m2, pur.purifying, where="left")
    out1 = lifted1.apply(pur.pure_state)
    out2 = lifted2.apply(pur.pure_state)
    return float(np.max(np.abs(out1.coords - out2.coords))) <= tol


# ---------------------------------------------------------------------------
# dilation of channels


@dataclass(frozen=True)
class Dilation:
    """An isometric lift of a channel: discarding the environment factor
    of the lifted output recovers the channel."""

    model: TheoryModel
    channel: LinearMap
    isometry: np.ndarray   # (h_out * h_env) x h_in
    environment: SystemLabel

    @property
    def kraus(self) -> tuple:
        h_out = self.channel.output.hilbert_dim
        h_env = self.environment.hilbert_dim
        v = self.isometry.reshape(h_out, h_env, self.channel.input.hilbert_dim)
        return tuple(v[:, e, :] for e in range(h_env))

    def lifted_channel(self) -> LinearMap:
        joint = self.model.compose(self.channel.output, self.environment)
        return self.model.map_from_kraus(self.channel.input, joint,
                                         (self.isometry,), tag="channel")

    def isometry_residual(self) -> float:
        h_in = self.channel.input.hilbert_dim
        gram = np.conj(self.isometry).T @ self.isometry
        return float(np.max(np.abs(gram - np.eye(h_in))))

    def reduction_residual(self) -> float:
        back = self.model.map_from_kraus(self.channel.input,
                                         self.channel.output, self.kraus)
        return float(np.max(np.abs(back.matrix - self.channel.matrix)))

    def reversible_form(self):
        """(ancilla system, pure ancilla state, reversible map) such that
        applying the reversible map to input (x) ancilla reproduces the
        isometry. Needs the environment to divide evenly."""
        h_in = self.channel.input.hilbert_dim
        h_tot = self.isometry.shape[0]
        if h_tot % h_in:
            raise UnsupportedOperation(
                "no square reversible extension: output times environment "
                "is not a multiple of the input dimension")
        h_anc = h_tot // h_in
        anc = self.model.system(h_anc)
        # columns of the isometry seed the first block; complete the basis
        u = _complete_columns(self.isometry, h_tot)
        # reorder so column (a, anc0) maps like the isometry on |a>|0>
        full = np.zeros((h_tot, h_tot), dtype=u.dtype)
        for a in range(h_in):
            full[:, a * h_anc] = self.isometry[:, a]
        fill = [c for c in range(h_tot) if c % h_anc != 0]
        extra = u[:, h_in:]
        for c, col in zip(fill, extra.T):
            full[:, c] = col
        anc0 = np.zeros(h_anc)
        anc0[0] = 1.0
        joint_in = self.model.compose(self.channel.input, anc)
        joint_out = self.model.compose(self.channel.output, self.environment)
        rev = self.model.map_from_kraus(joint_in, joint_out, (full,),
                                        tag="reversible")
        return anc, self.model.pure_state(anc, anc0), rev


def _complete_columns(v: np.ndarray, n: int) -> np.ndarray:
    """An n x n unitary whose leading columns are the columns of v."""
    k = v.shape[1]
    basis = [v[:, i] for i in range(k)]
    for cand in np.eye(n, dtype=v.dtype).T:
        if len(basis) == n:
            break
        w = cand.astype(complex if np.iscomplexobj(v) else float)
        for b in basis:
            w = w - b * (np.conj(b) @ w)
        norm = np.linalg.norm(w)
        if norm > 1e-7:
            basis.append(w / norm)
    if len(basis) != n:
        raise AssertionError("basis completion failed")
    return np.stack(basis, axis=1)


def _minimal_kraus(model: TheoryModel, channel: LinearMap,
                   floor: float = RANK_FLOOR) -> tuple:
    """A linearly independent Kraus family for a matrix-model channel."""
    h_out = channel.output.hilbert_dim
    h_in = channel.input.hilbert_dim
    if model.theory == QUANTUM:
        j = choi_matrix(model, channel)
    else:
        if channel.kraus is None:
            raise UnsupportedOperation(
                "real-quantum dilation needs a Kraus realization: the "
                "symmetric-sector matrix does not determine one")
        stack = np.stack([np.asarray(k).reshape(-1) for k in channel.kraus])
        j = stack.T @ np.conj(stack)
    vals, vecs = np.linalg.eigh(j)
    kraus = []
    for lam, v in sorted(zip(vals, vecs.T), key=lambda t: -t[0]):
        if lam > floor:
            kraus.append(np.sqrt(lam) * v.reshape(h_out, h_in))
    if not kraus:
        raise ValueError("zero channel has no dilation")
    if getattr(model, "real_carrier", False):
        kraus = [np.real(k) for k in kraus]
    return tuple(kraus)


def _stack_isometry(kraus: Sequence[np.ndarray]) -> np.ndarray:
    n = len(kraus)
    cols = []
    for e, k in enumerate(kraus):
        sel = np.zeros((n, 1))
        sel[e, 0] = 1.0
        cols.append(np.kron(k, sel))
    return sum(cols)


def stinespring(model: TheoryModel, channel: LinearMap,
                tol: float = DEFAULT_TOL,
                minimal: bool = True) -> Dilation:
    """Lift a channel to an isometry into output (x) environment. The
    environment dimension is the Kraus rank unless minimal=False keeps a
    Kraus list already attached to the map."""
    if model.theory == CLASSICAL:
        raise UnsupportedOperation(
            "classical channels admit no reversible dilation with a pure "
            "ancilla: purification fails in the classical model")
    if check_channel(channel, model, tol=max(tol, 1e-8)).kind != "channel":
        raise ValueError("only channels have isometric dilations")
    if minimal or channel.kraus is None:
        kraus = _minimal_kraus(model, channel)
    else:
        kraus = channel.kraus
    env = model.system(len(kraus))
    return Dilation(model, channel, _stack_isometry(kraus), env)


def complementary_channel(model: TheoryModel, channel: LinearMap,
                          dilation: Optional[Dilation] = None) -> LinearMap:
    """The environment branch of a dilation: what leaks out when the
    channel acts. Uses the map's own Kraus list when present so the
    environment basis is predictable."""
    if dilation is None:
        dilation = stinespring(model, channel,
                               minimal=channel.kraus is None)
    h_out = channel.output.hilbert_dim
    h_env = dilation.environment.hilbert_dim
    v = dilation.isometry.reshape(h_out, h_env,
                                  channel.input.hilbert_dim)
    comp_kraus = tuple(v[b, :, :] for b in range(h_out))
    return model.map_from_kraus(channel.input, dilation.environment,
                                comp_kraus, tag="channel")


def _prep_dilation(model: TheoryModel, pur: Purification) -> Dilation:
    """View a purification as a dilation of the preparation event."""
    m = _coefficient_matrix(model, pur.pure_state,
                            len(pur.original.system.dims))
    prep = state_as_map(model, pur.original)
    iso = m.reshape(-1, 1)
    return Dilation(model, prep, iso, pur.purifying)


@dataclass(frozen=True)
class DilationLink:
    """The channel on environments carrying one dilation onto another."""

    channel: LinearMap       # channel E1 -> E2
    unitary: Optional[np.ndarray]  # square connector when sizes match
    residual: float          # how well (I (x) Z) V1 reproduces V2


def connect_dilations(d1: Dilation, d2: Dilation,
                      tol: float = 1e-8) -> DilationLink:
    """Find the channel on environments with (I (x) Z) after the first
    isometry giving the second. Raises NotSameChannel when the two
    dilations do not reduce to the same channel."""
    model = d1.model
    c1 = model.map_from_kraus(d1.channel.input, d1.channel.output, d1.kraus)
    c2 = model.map_from_kraus(d2.channel.input, d2.channel.output, d2.kraus)
    dist = float(np.max(np.abs(c1.matrix - c2.matrix)))
    if dist > tol:
        raise NotSameChannel(
            f"dilations reduce to different channels (coordinate gap "
            f"{dist:.3e})", dist)

    ref = _minimal_kraus(model, c1)
    a_ref = np.stack([k.reshape(-1) for k in ref])           # r x (h_out h_in)
    y = []
    for d in (d1, d2):
        a_i = np.stack([k.reshape(-1) for k in d.kraus])
        yi, *_ = np.linalg.lstsq(np.conj(a_ref).T,
                                 np.conj(a_i).T, rcond=None)
        y.append(np.conj(yi).T)                              # h_env_i x r
    y1, y2 = y

    e1, e2 = d1.environment, d2.environment
    h1, h2 = e1.hilbert_dim, e2.hilbert_dim
    kraus_z = [y2 @ np.conj(y1).T]
    # measure the part of E1 outside the first dilation's range and
    # prepare a fixed pure state so the connector is trace preserving
    p1 = y1 @ np.conj(y1).T
    ker = _orthonormal_kernel(p1)
    if ker.shape[1]:
        target = y2[:, 0] / np.linalg.norm(y2[:, 0])
        for j in range(ker.shape[1]):
            kraus_z.append(np.outer(target, np.conj(ker[:, j])))
    if getattr(model, "real_carrier", False):
        kraus_z = [np.real(k) for k in kraus_z]
    z = model.map_from_kraus(e1, e2, tuple(kraus_z), tag="channel")

    unitary = None
    if h1 == h2:
        b1 = _orthonormal_kernel(p1)
        b2 = _orthonormal_kernel(y2 @ np.conj(y2).T)
        unitary = y2 @ np.conj(y1).T
        if b1.shape[1]:
            unitary = unitary + b2 @ np.conj(b1).T

    residual = _transport_residual(d1, d2, kraus_z)
    return DilationLink(z, unitary, residual)


def _transport_residual(d1: Dilation, d2: Dilation,
                        kraus_z: Sequence[np.ndarray]) -> float:
    """Gap between the second dilation and the first one pushed through
    the connector, compared as channels into output (x) environment."""
    h_b = d1.channel.output.hilbert_dim
    moved = [np.kron(np.eye(h_b), zk) @ d1.isometry for zk in kraus_z]
    frame = sum(np.outer(w.reshape(-1), np.conj(w.reshape(-1)))
                for w in moved)
    v2 = d2.isometry.reshape(-1)
    return float(np.max(np.abs(frame - np.outer(v2, np.conj(v2)))))


def _orthonormal_kernel(p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis of the kernel of a projector-like PSD matrix."""
    vals, vecs = np.linalg.eigh(p)
    cols = [vecs[:, i] for i, lam in enumerate(vals) if lam < tol]
    if not cols:
        return np.zeros((p.shape[0], 0), dtype=p.dtype)
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# dilation of tests


@dataclass(frozen=True)
class TestDilation:
    """An isometry plus a projective environment readout realizing every
    branch of a test."""

    model: TheoryModel
    test: Test
    dilation: Dilation          # of the coarse-grained channel
    blocks: tuple               # outcome -> tuple of environment indices
    ancilla_test: Test          # projective observation on the environment

    def branch_residual(self, outcome) -> float:
        idx = dict(self.blocks)[outcome]
        kraus = [self.dilation.kraus[e] for e in idx]
        back = self.model.map_from_kraus(self.test.input_system,
                                         self.dilation.channel.output, kraus)
        want = self.test.branch_map(outcome)
        return float(np.max(np.abs(back.matrix - want.matrix)))


def dilate_test(model: TheoryModel, test: Test,
                tol: float = DEFAULT_TOL) -> TestDilation:
    """Realize a test as one isometry followed by a projective
    measurement on the environment: outcome blocks partition the
    environment basis, and reading block i reproduces branch i."""
    if model.theory == CLASSICAL:
        raise UnsupportedOperation(
            "classical tests have no pure-ancilla dilation")
    all_kraus = []
    blocks = []
    for outcome in test.outcomes:
        branch = test.branch_map(outcome)
        if branch.kraus is not None:
            ks = branch.kraus
        else:
            if model.theory != QUANTUM:
                raise UnsupportedOperation(
                    "real-quantum test dilation needs Kraus branches")
            ks = _minimal_kraus(model, branch, floor=RANK_FLOOR)
        start = len(all_kraus)
        all_kraus.extend(np.asarray(k) for k in ks)
        blocks.append((outcome, tuple(range(start, len(all_kraus)))))

    total = model.map_from_kraus(test.input_system,
                                 test.branch_map(test.outcomes[0]).output,
                                 tuple(all_kraus), tag="channel")
    env = model.system(len(all_kraus))
    dil = Dilation(model, total, _stack_isometry(all_kraus), env)
    if dil.isometry_residual() > 1e-8:
        raise ValueError("test branches do not sum to a channel")

    h_env = len(all_kraus)
    branches = {}
    for outcome, idx in blocks:
        proj = np.zeros((h_env, h_env))
        for e in idx:
            proj[e, e] = 1.0
        branches[outcome] = EffectVec(env, model.to_coords(env, proj))
    anc_test = Test(model, branches)
    return TestDilation(model, test, dil, tuple(blocks), anc_test)
