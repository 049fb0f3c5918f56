"""Coordinate models of three operational theories.

Systems are labelled by an ordered tuple of atomic factors. States and
effects are real coordinate vectors over a fixed basis of the model's
ambient space, transformations are real matrices acting on coordinates:

- classical(n): probability vectors over n outcomes, D = n, composites
  multiply outcome counts, so D(AB) = D(A) D(B).
- quantum(d): Hermitian d x d matrices over an orthonormal basis
  (identity / sqrt(d) first, then generalized Gell-Mann elements in the
  order symmetric, antisymmetric, diagonal), D = d^2. A composite label
  uses tensor products of the factor bases in lexicographic order, so
  product embedding is a Kronecker product and D(AB) = D(A) D(B).
- real-quantum(d): real symmetric d x d matrices, D = d(d+1)/2. A
  composite label uses the canonical symmetric basis of the tensor
  product space, so D(AB) = (dA dB)(dA dB + 1)/2, which exceeds
  D(A) D(B); joint states are not determined by local pairings here.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from purelab.cones import Cone, cone_contains

DEFAULT_TOL = 1e-9
# eigenvalues below this count as zero when extracting ranks and Kraus terms
RANK_FLOOR = 1e-12

CLASSICAL = "classical"
QUANTUM = "quantum"
REAL_QUANTUM = "real-quantum"


class PurificationUnsupported(Exception):
    """The model cannot purify the given state."""


class UnsupportedOperation(Exception):
    """The model does not support the requested operation."""


# ---------------------------------------------------------------------------
# bases


@lru_cache(maxsize=None)
def hermitian_basis(d: int) -> tuple:
    """Orthonormal Hermitian basis of C^{d x d} under <A, B> = tr[A B].

    Order: identity / sqrt(d), then for each pair j < k (lexicographic)
    the symmetric element, then the antisymmetric elements, then the
    traceless diagonal elements. For d = 2 this is (I, X, Y, Z) / sqrt(2).
    """
    if d == 1:
        return (np.eye(1, dtype=complex),)
    out = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = m[k, j] = 1.0 / np.sqrt(2.0)
            out.append(m)
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = -1j / np.sqrt(2.0)
            m[k, j] = 1j / np.sqrt(2.0)
            out.append(m)
    for l in range(1, d):
        m = np.zeros((d, d), dtype=complex)
        for j in range(l):
            m[j, j] = 1.0
        m[l, l] = -float(l)
        out.append(m / np.sqrt(l * (l + 1)))
    return tuple(out)


@lru_cache(maxsize=None)
def symmetric_basis(d: int) -> tuple:
    """Orthonormal basis of real symmetric d x d matrices.

    The real-symmetric subset of hermitian_basis in the same order:
    identity / sqrt(d), symmetric off-diagonal pairs, traceless diagonal.
    """
    if d == 1:
        return (np.eye(1),)
    out = [np.eye(d) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d))
            m[j, k] = m[k, j] = 1.0 / np.sqrt(2.0)
            out.append(m)
    for l in range(1, d):
        m = np.zeros((d, d))
        for j in range(l):
            m[j, j] = 1.0
        m[l, l] = -float(l)
        out.append(m / np.sqrt(l * (l + 1)))
    return tuple(out)


@lru_cache(maxsize=None)
def _kron_basis(dims: tuple) -> np.ndarray:
    """Stacked tensor-product Hermitian basis for a quantum composite."""
    if len(dims) == 0:
        return np.eye(1, dtype=complex).reshape(1, 1, 1)
    arrs = [np.stack(hermitian_basis(d)) for d in dims]
    acc = arrs[0]
    for nxt in arrs[1:]:
        acc = np.einsum("aij,bkl->abikjl", acc, nxt).reshape(
            acc.shape[0] * nxt.shape[0],
            acc.shape[1] * nxt.shape[1],
            acc.shape[2] * nxt.shape[2])
    return acc


@lru_cache(maxsize=None)
def _sym_basis_stack(h: int) -> np.ndarray:
    return np.stack(symmetric_basis(h))


def weyl(d: int, a: int, b: int) -> np.ndarray:
    """Discrete displacement unitary on C^d: W|j> = exp(2 pi i b j / d) |j+a>.

    The d^2 displacements are trace-orthogonal; for d = 2 they are the
    real matrices I, X, XZ, Z (a, b) = (0,0), (1,0), (1,1), (0,1).
    """
    idx = np.arange(d)
    w = np.zeros((d, d), dtype=complex)
    w[(idx + a) % d, idx] = np.exp(2j * np.pi * b * idx / d)
    return w


# ---------------------------------------------------------------------------
# labels and carriers


@dataclass(frozen=True)
class SystemLabel:
    """A system: theory id, ordered atomic factors, coordinate dimension."""

    theory: str
    dims: tuple
    coord_dim: int

    @property
    def hilbert_dim(self) -> int:
        out = 1
        for d in self.dims:
            out *= d
        return out

    def __repr__(self) -> str:
        inner = "*".join(str(d) for d in self.dims) or "I"
        return f"<{self.theory}:{inner}>"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateVec:
    system: SystemLabel
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _freeze(self.coords))
        if self.coords.shape != (self.system.coord_dim,):
            raise ValueError("state coordinate length mismatch")


@dataclass(frozen=True)
class EffectVec:
    system: SystemLabel
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _freeze(self.coords))
        if self.coords.shape != (self.system.coord_dim,):
            raise ValueError("effect coordinate length mismatch")

    def pair(self, state: StateVec) -> float:
        if state.system != self.system:
            raise ValueError("pairing across different systems")
        return float(np.dot(self.coords, state.coords))


def _combine_tags(a: str, b: str) -> str:
    order = {"reversible": 0, "channel": 1, "transformation": 2, "unconstrained": 3}
    return max(a, b, key=lambda t: order.get(t, 3))


@dataclass(frozen=True)
class LinearMap:
    """A linear map between coordinate spaces.

    tag records what the constructor certified: "reversible", "channel",
    "transformation" (probabilistic branch) or "unconstrained". kraus, when
    present, is a tuple of Hilbert-space operators realizing the map in the
    quantum or real-quantum model; real-quantum local lifts require it.
    """

    input: SystemLabel
    output: SystemLabel
    matrix: np.ndarray
    tag: str = "unconstrained"
    kraus: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "matrix", _freeze(self.matrix))
        if self.matrix.shape != (self.output.coord_dim, self.input.coord_dim):
            raise ValueError("map shape mismatch")
        if self.kraus is not None:
            object.__setattr__(self, "kraus", tuple(np.asarray(k) for k in self.kraus))

    def apply(self, state: StateVec) -> StateVec:
        if state.system != self.input:
            raise ValueError("map applied to wrong system")
        return StateVec(self.output, self.matrix @ state.coords)

    def pullback(self, effect: EffectVec) -> EffectVec:
        if effect.system != self.output:
            raise ValueError("pullback from wrong system")
        return EffectVec(self.input, effect.coords @ self.matrix)

    def __matmul__(self, other: "LinearMap") -> "LinearMap":
        if other.output != self.input:
            raise ValueError("composition system mismatch")
        kraus = None
        if self.kraus is not None and other.kraus is not None:
            kraus = tuple(a @ b for a in self.kraus for b in other.kraus)
        return LinearMap(other.input, self.output, self.matrix @ other.matrix,
                         tag=_combine_tags(self.tag, other.tag), kraus=kraus)

    def adjoint(self) -> "LinearMap":
        return LinearMap(self.output, self.input, self.matrix.T)


# ---------------------------------------------------------------------------
# the models


class TheoryModel:
    theory = ""

    def __init__(self, default_dim: int):
        if default_dim < 2:
            raise ValueError("model dimension must be at least 2")
        self.default_system = self.system(default_dim)

    # -- labels

    def system(self, *dims: int) -> SystemLabel:
        for d in dims:
            if d < 1:
                raise ValueError("factor dimension must be positive")
        dims = tuple(int(d) for d in dims)
        return SystemLabel(self.theory, dims, self._coord_dim(dims))

    def compose(self, *labels: SystemLabel) -> SystemLabel:
        dims = ()
        for lab in labels:
            if lab.theory != self.theory:
                raise ValueError("cannot compose across theories")
            dims = dims + lab.dims
        return SystemLabel(self.theory, dims, self._coord_dim(dims))

    def trivial(self) -> SystemLabel:
        return SystemLabel(self.theory, (), 1)

    def _coord_dim(self, dims: tuple) -> int:
        raise NotImplementedError

    # -- matrix carriers (identity for classical)

    def to_coords(self, system: SystemLabel, matrix: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def from_coords(self, system: SystemLabel, coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- distinguished objects

    def deterministic_effect(self, system: SystemLabel) -> EffectVec:
        raise NotImplementedError

    def invariant_state(self, system: SystemLabel) -> StateVec:
        raise NotImplementedError

    def identity_map(self, system: SystemLabel) -> LinearMap:
        raise NotImplementedError

    # -- cones

    def state_cone(self, system: SystemLabel) -> Cone:
        raise NotImplementedError

    def effect_cone(self, system: SystemLabel) -> Cone:
        raise NotImplementedError

    def is_state(self, x: StateVec, tol: float = DEFAULT_TOL) -> bool:
        """Cone membership plus sub-normalization <e, x> <= 1."""
        if not cone_contains(self.state_cone(x.system), x.coords, tol):
            return False
        return self.deterministic_effect(x.system).pair(x) <= 1.0 + tol

    def is_normalized_state(self, x: StateVec, tol: float = DEFAULT_TOL) -> bool:
        if not cone_contains(self.state_cone(x.system), x.coords, tol):
            return False
        return abs(self.deterministic_effect(x.system).pair(x) - 1.0) <= tol

    def is_effect(self, f: EffectVec, tol: float = DEFAULT_TOL) -> bool:
        cone = self.effect_cone(f.system)
        if not cone_contains(cone, f.coords, tol):
            return False
        rest = self.deterministic_effect(f.system).coords - f.coords
        return cone_contains(cone, rest, tol)

    # -- products and marginals

    def embed_product(self, x, y):
        """Tensor product of two states or two effects."""
        if type(x) is not type(y):
            raise ValueError("can only embed two states or two effects")
        out_sys = self.compose(x.system, y.system)
        coords = self._product_coords(x.system, x.coords, y.system, y.coords)
        return type(x)(out_sys, coords)

    def _product_coords(self, sys_a, xa, sys_b, xb) -> np.ndarray:
        raise NotImplementedError

    def lift_local(self, m: LinearMap, other: SystemLabel,
                   where: str = "left") -> LinearMap:
        """m tensor identity on `other` (where="left"), or identity tensor m."""
        raise NotImplementedError

    def marginal(self, x: StateVec, keep: Sequence[int]) -> StateVec:
        """Discard all factors not in keep by pairing with the unit effect."""
        raise NotImplementedError

    def permute_map(self, system: SystemLabel, perm: Sequence[int]) -> LinearMap:
        """Reversible wire permutation: output factor k is input factor perm[k]."""
        raise NotImplementedError

    # -- randomized constructors

    def random_pure_state(self, system: SystemLabel, rng) -> StateVec:
        raise NotImplementedError

    def random_mixed_state(self, system: SystemLabel, rng,
                           rank: Optional[int] = None) -> StateVec:
        raise NotImplementedError

    def random_reversible(self, system: SystemLabel, rng) -> LinearMap:
        raise NotImplementedError

    def random_channel(self, sys_in: SystemLabel, sys_out: SystemLabel, rng,
                       kraus_count: Optional[int] = None) -> LinearMap:
        raise NotImplementedError

    # -- structure probes

    def op_norm(self, system: SystemLabel, delta: np.ndarray) -> float:
        """Operational norm of a difference of states."""
        raise NotImplementedError

    def is_pure(self, x: StateVec, tol: float = DEFAULT_TOL) -> bool:
        raise NotImplementedError

    def purify(self, x: StateVec, pad_to: Optional[int] = None):
        """Returns (pure StateVec on A (x) A~, purifying label A~)."""
        raise NotImplementedError

    def spanning_states(self, system: SystemLabel) -> list:
        """A deterministic list of coord_dim normalized states spanning R^D."""
        raise NotImplementedError


# ---------------------------------------------------------------------------


class ClassicalModel(TheoryModel):
    theory = CLASSICAL

    def _coord_dim(self, dims: tuple) -> int:
        out = 1
        for d in dims:
            out *= d
        return out

    def to_coords(self, system, matrix):
        return np.asarray(matrix, dtype=float).reshape(system.coord_dim)

    def from_coords(self, system, coords):
        return np.asarray(coords, dtype=float)

    def deterministic_effect(self, system):
        return EffectVec(system, np.ones(system.coord_dim))

    def invariant_state(self, system):
        n = system.coord_dim
        return StateVec(system, np.full(n, 1.0 / n))

    def identity_map(self, system):
        return LinearMap(system, system, np.eye(system.coord_dim), tag="reversible")

    def state_cone(self, system):
        n = system.coord_dim
        eye = np.eye(n)
        return Cone(n, generators=tuple(eye), facets=tuple(eye), name="prob-orthant")

    def effect_cone(self, system):
        return self.state_cone(system)

    def _product_coords(self, sys_a, xa, sys_b, xb):
        return np.kron(xa, xb)

    def lift_local(self, m, other, where="left"):
        eye = np.eye(other.coord_dim)
        if where == "left":
            mat = np.kron(m.matrix, eye)
            sys_in, sys_out = self.compose(m.input, other), self.compose(m.output, other)
        else:
            mat = np.kron(eye, m.matrix)
            sys_in, sys_out = self.compose(other, m.input), self.compose(other, m.output)
        return LinearMap(sys_in, sys_out, mat, tag=m.tag)

    def marginal(self, x, keep):
        keep = tuple(keep)
        dims = x.system.dims
        t = x.coords.reshape(dims if dims else (1,))
        for axis in sorted((i for i in range(len(dims)) if i not in keep), reverse=True):
            t = t.sum(axis=axis)
        out_sys = self.system(*[dims[i] for i in keep])
        return StateVec(out_sys, t.reshape(out_sys.coord_dim))

    def permute_map(self, system, perm):
        dims = system.dims
        n = len(dims)
        perm = tuple(perm)
        out_sys = self.system(*[dims[i] for i in perm])
        d = system.coord_dim
        mat = np.eye(d).reshape(dims + (d,)).transpose(perm + (n,)).reshape(d, d)
        return LinearMap(system, out_sys, mat, tag="reversible")

    def random_pure_state(self, system, rng):
        n = system.coord_dim
        coords = np.zeros(n)
        coords[int(rng.integers(n))] = 1.0
        return StateVec(system, coords)

    def random_mixed_state(self, system, rng, rank=None):
        n = system.coord_dim
        w = rng.uniform(0.05, 1.0, size=n)
        if rank is not None and rank < n:
            w[rank:] = 0.0
        return StateVec(system, w / w.sum())

    def random_reversible(self, system, rng):
        n = system.coord_dim
        perm = rng.permutation(n)
        mat = np.zeros((n, n))
        mat[perm, np.arange(n)] = 1.0
        return LinearMap(system, system, mat, tag="reversible")

    def random_channel(self, sys_in, sys_out, rng, kraus_count=None):
        cols = rng.uniform(0.05, 1.0, size=(sys_out.coord_dim, sys_in.coord_dim))
        cols = cols / cols.sum(axis=0, keepdims=True)
        return LinearMap(sys_in, sys_out, cols, tag="channel")

    def stochastic_channel(self, sys_in, sys_out, matrix,
                           tol: float = DEFAULT_TOL) -> LinearMap:
        matrix = np.asarray(matrix, dtype=float)
        if np.min(matrix) < -tol:
            raise ValueError("negative transition probability")
        tag = "channel" if np.max(np.abs(matrix.sum(axis=0) - 1.0)) <= tol else "transformation"
        return LinearMap(sys_in, sys_out, matrix, tag=tag)

    def op_norm(self, system, delta):
        return float(np.sum(np.abs(delta)))

    def is_pure(self, x, tol=DEFAULT_TOL):
        return int(np.sum(np.abs(x.coords) > tol)) <= 1

    def purify(self, x, pad_to=None):
        if not self.is_pure(x, tol=1e-9):
            raise PurificationUnsupported(
                "classical mixed states have no pure dilation: pure composite "
                "states are products of pure marginals")
        tilde = self.system(1)
        psi = self.embed_product(x, StateVec(tilde, np.ones(1)))
        return psi, tilde

    def spanning_states(self, system):
        n = system.coord_dim
        return [StateVec(system, row) for row in np.eye(n)]


# ---------------------------------------------------------------------------


class _MatrixModel(TheoryModel):
    """Shared machinery for the two matrix-carried models."""

    real_carrier = False

    def _basis_stack(self, system: SystemLabel) -> np.ndarray:
        raise NotImplementedError

    def to_coords(self, system, matrix):
        basis = self._basis_stack(system)
        return np.real(np.einsum("kij,ji->k", basis, np.asarray(matrix)))

    def from_coords(self, system, coords):
        basis = self._basis_stack(system)
        out = np.einsum("k,kij->ij", np.asarray(coords, dtype=float), basis)
        return np.real(out) if self.real_carrier else out

    def deterministic_effect(self, system):
        return EffectVec(system, self.to_coords(system, np.eye(system.hilbert_dim)))

    def invariant_state(self, system):
        h = system.hilbert_dim
        return StateVec(system, self.to_coords(system, np.eye(h) / h))

    def identity_map(self, system):
        eye_h = np.eye(system.hilbert_dim)
        if not self.real_carrier:
            eye_h = eye_h.astype(complex)
        return LinearMap(system, system, np.eye(system.coord_dim),
                         tag="reversible", kraus=(eye_h,))

    def _psd(self, system, coords, tol):
        m = self.from_coords(system, coords)
        scale = max(1.0, float(np.max(np.abs(m))))
        return bool(np.min(np.linalg.eigvalsh(m)) >= -tol * scale)

    def state_cone(self, system):
        return Cone(system.coord_dim,
                    membership=lambda x, tol: self._psd(system, x, tol),
                    name=f"{self.theory}-psd")

    def effect_cone(self, system):
        # the positive cone is self-dual in both matrix models
        return self.state_cone(system)

    def map_from_kraus(self, sys_in: SystemLabel, sys_out: SystemLabel,
                       kraus: Iterable[np.ndarray], tag: str = "transformation",
                       ) -> LinearMap:
        kraus = tuple(np.asarray(k) for k in kraus)
        basis_in = self._basis_stack(sys_in)
        cols = []
        for j in range(sys_in.coord_dim):
            f = basis_in[j]
            out = sum(k @ f @ np.conj(k).T for k in kraus)
            cols.append(self.to_coords(sys_out, out))
        return LinearMap(sys_in, sys_out, np.stack(cols, axis=1), tag=tag, kraus=kraus)

    def unitary_channel(self, system: SystemLabel, u: np.ndarray,
                        tol: float = 1e-9) -> LinearMap:
        u = np.asarray(u)
        h = system.hilbert_dim
        if np.max(np.abs(np.conj(u).T @ u - np.eye(h))) > tol:
            raise ValueError("matrix is not unitary")
        return self.map_from_kraus(system, system, (u,), tag="reversible")

    def basis_state(self, system: SystemLabel, i: int) -> StateVec:
        h = system.hilbert_dim
        m = np.zeros((h, h))
        m[i, i] = 1.0
        return StateVec(system, self.to_coords(system, m))

    def pure_state(self, system: SystemLabel, vec: np.ndarray) -> StateVec:
        vec = np.asarray(vec)
        return StateVec(system, self.to_coords(system, np.outer(vec, np.conj(vec))))

    def op_norm(self, system, delta):
        m = self.from_coords(system, np.asarray(delta, dtype=float))
        return float(np.sum(np.abs(np.linalg.eigvalsh(m))))

    def is_pure(self, x, tol=DEFAULT_TOL):
        m = self.from_coords(x.system, x.coords)
        vals = np.sort(np.linalg.eigvalsh(m))
        tr = float(np.real(np.trace(m)))
        if tr <= tol:
            return False
        return bool(abs(vals[-1] - tr) <= tol * max(1.0, tr)
                    and (len(vals) == 1 or np.max(np.abs(vals[:-1])) <= tol))

    def _random_vec(self, h, rng):
        raise NotImplementedError

    def random_pure_state(self, system, rng):
        v = self._random_vec(system.hilbert_dim, rng)
        return self.pure_state(system, v / np.linalg.norm(v))

    def random_mixed_state(self, system, rng, rank=None):
        h = system.hilbert_dim
        r = rank or h
        g = np.stack([self._random_vec(h, rng) for _ in range(r)], axis=1)
        m = g @ np.conj(g).T
        m = m / np.real(np.trace(m))
        return StateVec(system, self.to_coords(system, m))

    def random_reversible(self, system, rng):
        u = self._random_unitary(system.hilbert_dim, rng)
        return self.map_from_kraus(system, system, (u,), tag="reversible")

    def _random_unitary(self, h, rng):
        g = np.stack([self._random_vec(h, rng) for _ in range(h)], axis=1)
        q, r = np.linalg.qr(g)
        d = np.diag(r)
        return q * (d / np.abs(d))

    def random_channel(self, sys_in, sys_out, rng, kraus_count=None):
        h_in, h_out = sys_in.hilbert_dim, sys_out.hilbert_dim
        n = kraus_count or h_in
        u = self._random_unitary(h_out * n, rng)
        iso = u[:, :h_in].reshape(h_out, n, h_in)
        kraus = tuple(iso[:, e, :] for e in range(n))
        return self.map_from_kraus(sys_in, sys_out, kraus, tag="channel")

    def purify(self, x, pad_to=None):
        m = self.from_coords(x.system, x.coords)
        vals, vecs = np.linalg.eigh(m)
        keep = [(lam, vecs[:, i]) for i, lam in enumerate(vals) if lam > RANK_FLOOR]
        keep.reverse()  # descending eigenvalues
        rank = len(keep)
        if rank == 0:
            raise ValueError("cannot purify the zero state")
        d_t = pad_to or rank
        if d_t < rank:
            raise ValueError("purifying system smaller than the rank")
        tilde = self.system(d_t)
        h = x.system.hilbert_dim
        psi = np.zeros(h * d_t, dtype=complex if not self.real_carrier else float)
        for i, (lam, v) in enumerate(keep):
            e_i = np.zeros(d_t)
            e_i[i] = 1.0
            psi = psi + np.sqrt(lam) * np.kron(v, e_i)
        joint = self.compose(x.system, tilde)
        return StateVec(joint, self.to_coords(joint, np.outer(psi, np.conj(psi)))), tilde

    def marginal(self, x, keep):
        keep = tuple(keep)
        dims = x.system.dims
        m = self.from_coords(x.system, x.coords)
        reduced = _partial_trace(m, dims, keep)
        out_sys = self.system(*[dims[i] for i in keep])
        return StateVec(out_sys, self.to_coords(out_sys, reduced))

    def permute_map(self, system, perm):
        perm = tuple(perm)
        dims = system.dims
        out_sys = self.system(*[dims[i] for i in perm])
        u = _hilbert_permutation(dims, perm)
        if not self.real_carrier:
            u = u.astype(complex)
        basis = self._basis_stack(system)
        cols = [self.to_coords(out_sys, u @ basis[j] @ u.T.conj())
                for j in range(system.coord_dim)]
        return LinearMap(system, out_sys, np.stack(cols, axis=1),
                         tag="reversible", kraus=(u,))

    def spanning_states(self, system):
        h = system.hilbert_dim
        basis = self._basis_stack(system)
        chi = np.eye(h) / h
        out = [StateVec(system, self.to_coords(system, chi))]
        eps = 1.0 / (2.0 * h)
        for k in range(1, system.coord_dim):
            f = basis[k]
            t = float(np.real(np.trace(f)))
            rho = (chi + eps * f) / (1.0 + eps * t)
            out.append(StateVec(system, self.to_coords(system, rho)))
        return out


def _partial_trace(m: np.ndarray, dims: tuple, keep: tuple) -> np.ndarray:
    n = len(dims)
    if n == 0:
        return np.asarray(m)
    r = np.asarray(m).reshape(*dims, *dims)
    row = [chr(ord("a") + i) for i in range(n)]
    col = [row[i] if i not in keep else chr(ord("A") + i) for i in range(n)]
    dst = "".join(row[i] for i in keep) + "".join(chr(ord("A") + i) for i in keep)
    out = np.einsum("".join(row) + "".join(col) + "->" + dst, r)
    dkeep = 1
    for i in keep:
        dkeep *= dims[i]
    return out.reshape(dkeep, dkeep)


def _hilbert_permutation(dims: tuple, perm: tuple) -> np.ndarray:
    """Unitary reordering tensor factors of C^{d1} (x) ... (x) C^{dn}."""
    h = 1
    for d in dims:
        h *= d
    n = len(dims)
    return np.eye(h).reshape(dims + (h,)).transpose(perm + (n,)).reshape(h, h)


class QuantumModel(_MatrixModel):
    theory = QUANTUM
    real_carrier = False

    def _coord_dim(self, dims):
        out = 1
        for d in dims:
            out *= d * d
        return out

    def _basis_stack(self, system):
        return _kron_basis(system.dims)

    def _product_coords(self, sys_a, xa, sys_b, xb):
        return np.kron(xa, xb)

    def lift_local(self, m, other, where="left"):
        eye = np.eye(other.coord_dim)
        kraus = None
        h_o = other.hilbert_dim
        if where == "left":
            mat = np.kron(m.matrix, eye)
            sys_in, sys_out = self.compose(m.input, other), self.compose(m.output, other)
            if m.kraus is not None:
                kraus = tuple(np.kron(k, np.eye(h_o)) for k in m.kraus)
        else:
            mat = np.kron(eye, m.matrix)
            sys_in, sys_out = self.compose(other, m.input), self.compose(other, m.output)
            if m.kraus is not None:
                kraus = tuple(np.kron(np.eye(h_o), k) for k in m.kraus)
        return LinearMap(sys_in, sys_out, mat, tag=m.tag, kraus=kraus)

    def marginal(self, x, keep):
        # coordinate route: contract dropped factors with their unit effect
        keep = tuple(keep)
        dims = x.system.dims
        cds = tuple(d * d for d in dims)
        t = x.coords.reshape(cds if cds else (1,))
        for axis in sorted((i for i in range(len(dims)) if i not in keep), reverse=True):
            e = np.zeros(cds[axis])
            e[0] = np.sqrt(dims[axis])
            t = np.tensordot(t, e, axes=([axis], [0]))
        out_sys = self.system(*[dims[i] for i in keep])
        return StateVec(out_sys, t.reshape(out_sys.coord_dim))

    def _random_vec(self, h, rng):
        return rng.normal(size=h) + 1j * rng.normal(size=h)


class RealQuantumModel(_MatrixModel):
    theory = REAL_QUANTUM
    real_carrier = True

    def _coord_dim(self, dims):
        h = 1
        for d in dims:
            h *= d
        return h * (h + 1) // 2

    def _basis_stack(self, system):
        return _sym_basis_stack(system.hilbert_dim)

    def _product_coords(self, sys_a, xa, sys_b, xb):
        ma = self.from_coords(sys_a, xa)
        mb = self.from_coords(sys_b, xb)
        joint = self.compose(sys_a, sys_b)
        return self.to_coords(joint, np.kron(ma, mb))

    def lift_local(self, m, other, where="left"):
        if m.kraus is None:
            raise UnsupportedOperation(
                "real-quantum local lifts need a concrete Kraus realization: "
                "symmetric-sector coordinates do not determine the action on "
                "the antisymmetric-antisymmetric sector of a composite")
        h_o = other.hilbert_dim
        if where == "left":
            kraus = tuple(np.kron(k, np.eye(h_o)) for k in m.kraus)
            sys_in, sys_out = self.compose(m.input, other), self.compose(m.output, other)
        else:
            kraus = tuple(np.kron(np.eye(h_o), k) for k in m.kraus)
            sys_in, sys_out = self.compose(other, m.input), self.compose(other, m.output)
        return self.map_from_kraus(sys_in, sys_out, kraus, tag=m.tag)

    def _random_vec(self, h, rng):
        return rng.normal(size=h)

    def _random_unitary(self, h, rng):
        g = rng.normal(size=(h, h))
        q, r = np.linalg.qr(g)
        return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# model registry and channel classification


_MODELS = {}


def classical_model(n: int = 2) -> ClassicalModel:
    return ClassicalModel(n)


def quantum_model(d: int = 2) -> QuantumModel:
    return QuantumModel(d)


def real_quantum_model(d: int = 2) -> RealQuantumModel:
    return RealQuantumModel(d)


def get_model(theory: str, dim: int = 2) -> TheoryModel:
    if theory not in _MODELS:
        makers = {CLASSICAL: ClassicalModel, QUANTUM: QuantumModel,
                  REAL_QUANTUM: RealQuantumModel}
        if theory not in makers:
            raise ValueError(f"unknown theory {theory!r}")
        _MODELS[theory] = makers[theory](max(2, dim))
    return _MODELS[theory]


def choi_matrix(model: _MatrixModel, m: LinearMap) -> np.ndarray:
    """Unnormalized Choi operator sum_k C(F_k) (x) F_k^T on H_out (x) H_in."""
    basis_in = model._basis_stack(m.input)
    h_out, h_in = m.output.hilbert_dim, m.input.hilbert_dim
    j = np.zeros((h_out * h_in, h_out * h_in),
                 dtype=float if model.real_carrier else complex)
    for k in range(m.input.coord_dim):
        cf = model.from_coords(m.output, m.matrix[:, k])
        j = j + np.kron(cf, basis_in[k].T)
    return j


@dataclass(frozen=True)
class ChannelCheck:
    kind: str  # "channel" | "transformation" | "neither"
    residuals: dict


def check_channel(m: LinearMap, model: Optional[TheoryModel] = None,
                  tol: float = DEFAULT_TOL) -> ChannelCheck:
    """Classify a map: channel (unit-effect preserving + completely positive),
    probabilistic transformation (CP + effect-decreasing), or neither."""
    model = model or get_model(m.input.theory)
    e_in = model.deterministic_effect(m.input).coords
    e_out = model.deterministic_effect(m.output).coords
    pulled = e_out @ m.matrix
    norm_resid = float(np.max(np.abs(pulled - e_in)))

    if model.theory == CLASSICAL:
        cp_floor = float(np.min(m.matrix))
        sub = float(np.min(e_in - pulled))
    elif model.real_carrier:
        # Without local tomography the coordinate action does not pin
        # down complete positivity, so it is certified by checking that
        # the attached presentation reproduces the map.
        if m.kraus is None:
            raise UnsupportedOperation(
                "classifying a real map needs an attached Kraus "
                "presentation")
        rebuilt = model.map_from_kraus(m.input, m.output, m.kraus)
        cp_floor = -float(np.max(np.abs(rebuilt.matrix - m.matrix)))
        gap = model.from_coords(m.input, e_in - pulled)
        sub = float(np.min(np.linalg.eigvalsh(gap)))
    else:
        j = choi_matrix(model, m)
        cp_floor = float(np.min(np.linalg.eigvalsh(j)))
        gap = model.from_coords(m.input, e_in - pulled)
        sub = float(np.min(np.linalg.eigvalsh(gap)))

    residuals = {"normalization": norm_resid, "cp_floor": cp_floor,
                 "subnormalization_floor": sub}
    cp_ok = cp_floor >= -tol
    if cp_ok and norm_resid <= tol:
        kind = "channel"
    elif cp_ok and sub >= -tol:
        kind = "transformation"
    else:
        kind = "neither"
    return ChannelCheck(kind=kind, residuals=residuals)
