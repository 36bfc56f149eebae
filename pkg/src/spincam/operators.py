"""Operators on the 2^L cluster Hilbert space.

Per-site basis ordering is fixed at |up> = index 0, |down> = index 1, with
site 0 the most significant tensor factor (row-major site order).  Dense
builders return plain complex ndarrays and are capped at dim 512 (3x3
clusters); larger clusters must apply operators through the index-array
machinery in :class:`LocalOps` without materializing full matrices.

Model conventions:

* TFI:  H = -(V/4) sum_<jk> sx_j sx_k + (g/2) sum_k sz_k
* XYZ:  H = sum_<jk> (Jx sx_j sx_k + Jy sy_j sy_k + Jz sz_j sz_k)

Dissipation is local spin lowering, L_j = sqrt(Gamma) * sminus_j, on every
site.  An optional uniform probe field delta * sum_k sigma^beta_k (beta in
{x, y}) is used for susceptibility runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from spincam.errors import CapacityError, PreconditionError
from spincam.lattice import ClusterGeometry

#: Dense operator matrices are only materialized up to this Hilbert dimension.
MAX_DENSE_DIM = 512

HERMITICITY_TOL = 1e-12

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SIGMA_MINUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)


@dataclass(frozen=True)
class Probe:
    """Uniform probe field delta * sum_k sigma^axis_k."""

    axis: str
    delta: float

    def __post_init__(self) -> None:
        if self.axis not in ("x", "y"):
            raise PreconditionError(f"probe axis must be x or y, got {self.axis!r}")
        if not np.isfinite(self.delta):
            raise PreconditionError("probe amplitude must be finite")


@dataclass(frozen=True)
class ModelSpec:
    """Physical parameters of the dissipative TFI or XYZ model.

    TFI uses (v, g); XYZ uses (jx, jy, jz).  ``gamma`` is the local decay
    rate and must be positive.  Unused couplings stay at 0.
    """

    kind: str
    gamma: float
    v: float = 0.0
    g: float = 0.0
    jx: float = 0.0
    jy: float = 0.0
    jz: float = 0.0
    probe: Probe | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("tfi", "xyz"):
            raise PreconditionError(f"model kind must be 'tfi' or 'xyz', got {self.kind!r}")
        if not self.gamma > 0:
            raise PreconditionError(f"decay rate must be positive, got {self.gamma}")
        if self.probe is not None and abs(self.probe.delta) > 0.1 * self.gamma:
            warnings.warn(
                f"probe amplitude {self.probe.delta} exceeds 0.1*gamma; "
                "response may leave the linear regime",
                stacklevel=2,
            )

    @property
    def axes(self) -> tuple[str, ...]:
        """Interaction axes with nonzero bond couplings."""
        if self.kind == "tfi":
            return ("x",)
        return ("x", "y", "z")

    def bond_coupling(self, axis: str) -> float:
        """Coefficient of sigma^axis_j sigma^axis_k on each bond."""
        if self.kind == "tfi":
            return -self.v / 4.0 if axis == "x" else 0.0
        return {"x": self.jx, "y": self.jy, "z": self.jz}[axis]

    def with_probe(self, probe: Probe | None) -> "ModelSpec":
        return ModelSpec(
            kind=self.kind, gamma=self.gamma, v=self.v, g=self.g,
            jx=self.jx, jy=self.jy, jz=self.jz, probe=probe,
        )


class EffectiveFields:
    """Per-boundary-entry mean fields, one scalar per axis and entry.

    ``entry_values[axis][i]`` is the expectation of sigma^axis on the mirror
    site of the i-th ``boundary_map`` entry.  The per-site field that enters
    the boundary Hamiltonian is the sum over a site's entries.
    """

    def __init__(self, geom: ClusterGeometry, entry_values: dict[str, np.ndarray]):
        n = len(geom.boundary_map)
        for axis, vals in entry_values.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (n,):
                raise PreconditionError(
                    f"axis {axis}: expected {n} boundary entries, got {vals.shape}"
                )
            if not np.all(np.isfinite(vals)):
                raise PreconditionError(f"axis {axis}: non-finite field value")
            entry_values[axis] = vals
        self.geom = geom
        self.entry_values = entry_values

    @classmethod
    def zero(cls, geom: ClusterGeometry, axes: tuple[str, ...]) -> "EffectiveFields":
        n = len(geom.boundary_map)
        return cls(geom, {axis: np.zeros(n) for axis in axes})

    def site_totals(self, axis: str) -> np.ndarray:
        """Sum of mirror expectations per site, shape (n_sites,)."""
        totals = np.zeros(self.geom.n_sites)
        vals = self.entry_values[axis]
        for i, (j, _) in enumerate(self.geom.boundary_map):
            totals[j] += vals[i]
        return totals

    def negated(self) -> "EffectiveFields":
        return EffectiveFields(
            self.geom, {a: -v for a, v in self.entry_values.items()}
        )


class LocalOps:
    """Bit-indexed building blocks for operators on an lx x ly cluster.

    All arrays are indexed by the computational basis state a in [0, dim),
    where bit (L-1-j) of a is 0 for site j up and 1 for down.
    """

    def __init__(self, geom: ClusterGeometry):
        L = geom.n_sites
        dim = 1 << L
        ar = np.arange(dim, dtype=np.int64)
        self.geom = geom
        self.dim = dim
        self.states = ar
        self.bit = np.array([1 << (L - 1 - j) for j in range(L)], dtype=np.int64)
        # zsign[j, a] = +1 (up) / -1 (down); flip[j, a] = a with site j toggled
        bits = (ar[None, :] >> (L - 1 - np.arange(L))[:, None]) & 1
        self.zsign = (1 - 2 * bits).astype(np.float64)
        self.flip = ar[None, :] ^ self.bit[:, None]
        # ysign[j, a] = matrix element <a| sy_j |a^bit_j>
        self.ysign = np.where(bits == 0, -1.0j, 1.0j)
        # number of up spins per basis state (sum over sites of bit==0)
        self.n_up = (L - bits.sum(axis=0)).astype(np.float64)

    def site_x(self, j: int) -> np.ndarray:
        m = np.zeros((self.dim, self.dim), dtype=complex)
        m[self.states, self.flip[j]] = 1.0
        return m

    def site_y(self, j: int) -> np.ndarray:
        m = np.zeros((self.dim, self.dim), dtype=complex)
        m[self.states, self.flip[j]] = self.ysign[j]
        return m

    def site_z(self, j: int) -> np.ndarray:
        return np.diag(self.zsign[j]).astype(complex)

    def site_minus(self, j: int) -> np.ndarray:
        m = np.zeros((self.dim, self.dim), dtype=complex)
        down = self.zsign[j] < 0  # rows where site j is down receive amplitude
        m[self.states[down], self.flip[j][down]] = 1.0
        return m

    def expect_site(self, rho: np.ndarray, j: int, axis: str) -> float:
        """tr(sigma^axis_j rho) for a density matrix rho."""
        if axis == "z":
            return float(np.real(np.sum(self.zsign[j] * np.diagonal(rho))))
        flipped = rho[self.flip[j], self.states]
        if axis == "x":
            return float(np.real(np.sum(flipped)))
        # tr(sy rho) = sum_a (sy)_{a, a^b} rho_{a^b, a}
        return float(np.real(np.sum(self.ysign[j] * flipped)))

    def expect_site_state(self, psi: np.ndarray, j: int, axis: str) -> float:
        """<psi| sigma^axis_j |psi> for a normalized pure state."""
        if axis == "z":
            return float(np.real(np.sum(self.zsign[j] * np.abs(psi) ** 2)))
        amp = np.conj(psi) @ (psi[self.flip[j]] if axis == "x" else self.ysign[j] * psi[self.flip[j]])
        return float(np.real(amp))


@lru_cache(maxsize=None)
def local_ops(lx: int, ly: int) -> LocalOps:
    from spincam.lattice import build_cluster

    return LocalOps(build_cluster(lx, ly))


def _check_dense(geom: ClusterGeometry) -> None:
    if geom.dim > MAX_DENSE_DIM:
        raise CapacityError(
            f"dense operators capped at dim {MAX_DENSE_DIM}, "
            f"cluster {geom.label} has dim {geom.dim}"
        )


def _assert_hermitian(h: np.ndarray) -> np.ndarray:
    dev = np.abs(h - h.conj().T).max()
    if dev >= HERMITICITY_TOL:
        raise AssertionError(f"builder produced non-Hermitian matrix, dev={dev:.3e}")
    return h


def pauli(site: int, axis: str, geom: ClusterGeometry) -> np.ndarray:
    """Dense sigma^axis acting on one site, identity elsewhere."""
    _check_dense(geom)
    if not 0 <= site < geom.n_sites:
        raise PreconditionError(f"site {site} out of range for {geom.label}")
    ops = local_ops(geom.lx, geom.ly)
    if axis == "x":
        return ops.site_x(site)
    if axis == "y":
        return ops.site_y(site)
    if axis == "z":
        return ops.site_z(site)
    raise PreconditionError(f"axis must be x, y or z, got {axis!r}")


def hamiltonian_cluster(geom: ClusterGeometry, model: ModelSpec) -> np.ndarray:
    """Intra-cluster Hamiltonian (bond interactions plus local fields)."""
    _check_dense(geom)
    ops = local_ops(geom.lx, geom.ly)
    dim = geom.dim
    h = np.zeros((dim, dim), dtype=complex)
    ar = ops.states
    for (j, k) in geom.bonds:
        cx = model.bond_coupling("x")
        if cx != 0.0:
            h[ar, ar ^ ops.bit[j] ^ ops.bit[k]] += cx
        if model.kind == "xyz":
            cy = model.bond_coupling("y")
            if cy != 0.0:
                h[ar, ar ^ ops.bit[j] ^ ops.bit[k]] += cy * np.real(
                    ops.ysign[j] * ops.ysign[k]
                )
            cz = model.bond_coupling("z")
            if cz != 0.0:
                h[ar, ar] += cz * ops.zsign[j] * ops.zsign[k]
    if model.kind == "tfi":
        zdiag = 0.5 * model.g * ops.zsign.sum(axis=0)
        h[ar, ar] += zdiag
    return _assert_hermitian(h)


def hamiltonian_boundary(
    geom: ClusterGeometry, model: ModelSpec, fields: EffectiveFields
) -> np.ndarray:
    """Boundary mean-field Hamiltonian sum_j coupling * h_j * sigma^axis_j."""
    _check_dense(geom)
    if fields.geom.label != geom.label:
        raise PreconditionError("fields were built for a different geometry")
    ops = local_ops(geom.lx, geom.ly)
    dim = geom.dim
    h = np.zeros((dim, dim), dtype=complex)
    ar = ops.states
    for axis in model.axes:
        coeff = model.bond_coupling(axis)
        if coeff == 0.0:
            continue
        totals = fields.site_totals(axis)
        for j in range(geom.n_sites):
            c = coeff * totals[j]
            if c == 0.0:
                continue
            if axis == "x":
                h[ar, ops.flip[j]] += c
            elif axis == "y":
                h[ar, ops.flip[j]] += c * ops.ysign[j]
            else:
                h[ar, ar] += c * ops.zsign[j]
    return _assert_hermitian(h)


def probe_term(geom: ClusterGeometry, axis: str, delta: float) -> np.ndarray:
    """Uniform probe delta * sum_k sigma^axis_k over all sites."""
    _check_dense(geom)
    if not np.isfinite(delta):
        raise PreconditionError("probe amplitude must be finite")
    ops = local_ops(geom.lx, geom.ly)
    dim = geom.dim
    h = np.zeros((dim, dim), dtype=complex)
    ar = ops.states
    for j in range(geom.n_sites):
        if axis == "x":
            h[ar, ops.flip[j]] += delta
        elif axis == "y":
            h[ar, ops.flip[j]] += delta * ops.ysign[j]
        else:
            raise PreconditionError(f"probe axis must be x or y, got {axis!r}")
    return _assert_hermitian(h)


def hamiltonian_cmf(
    geom: ClusterGeometry, model: ModelSpec, fields: EffectiveFields
) -> np.ndarray:
    """Full mean-field Hamiltonian: cluster + boundary + optional probe."""
    h = hamiltonian_cluster(geom, model) + hamiltonian_boundary(geom, model, fields)
    if model.probe is not None:
        h = h + probe_term(geom, model.probe.axis, model.probe.delta)
    return h


def jump_operators(geom: ClusterGeometry, gamma: float) -> list[np.ndarray]:
    """One lowering operator sqrt(gamma) * sminus_j per site."""
    _check_dense(geom)
    if not gamma > 0:
        raise PreconditionError(f"decay rate must be positive, got {gamma}")
    ops = local_ops(geom.lx, geom.ly)
    root = np.sqrt(gamma)
    return [root * ops.site_minus(j) for j in range(geom.n_sites)]
