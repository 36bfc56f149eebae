"""Cluster mean-field Lindblad evolution to the steady state.

The nonlinear master equation couples the cluster density matrix to
boundary mean fields computed from its own instantaneous expectation
values.  Integration is classical fixed-step RK4 with the fields rebuilt
at every stage, which keeps the nonlinear order of accuracy.

Capacity: the full density matrix path is limited to n_sites <= 9
(dim 512).  A brute-force steady-state oracle for *fixed* fields,
built from the vectorized generator, is provided for dim <= 64.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from spincam import _kernels
from spincam.errors import (
    CapacityError,
    DegenerateSteadyStateError,
    PreconditionError,
    SolverError,
)
from spincam.lattice import ClusterGeometry
from spincam.operators import EffectiveFields, LocalOps, ModelSpec, local_ops

AXES = ("x", "y", "z")

MAX_ME_SITES = 9

TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-7
HERMITICITY_TOL = 1e-9
MAG_TOL = 1e-7


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, jumps: list[np.ndarray]) -> np.ndarray:
    """Dense Lindblad derivative -i[H,rho] + sum_a (L rho L+ - {L+L, rho}/2)."""
    if rho.shape != h.shape:
        raise PreconditionError(f"shape mismatch: rho {rho.shape}, H {h.shape}")
    out = -1j * (h @ rho - rho @ h)
    for l_op in jumps:
        if l_op.shape != rho.shape:
            raise PreconditionError("jump operator dimension mismatch")
        ld = l_op.conj().T
        ldl = ld @ l_op
        out += l_op @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)
    return out


def compute_fields(rho: np.ndarray, geom: ClusterGeometry, model: ModelSpec) -> EffectiveFields:
    """Mean fields: per boundary entry, the mirror-site expectation value."""
    ops = local_ops(geom.lx, geom.ly)
    values: dict[str, np.ndarray] = {}
    for axis in model.axes:
        values[axis] = np.array(
            [ops.expect_site(rho, k, axis) for (_, k) in geom.boundary_map]
        )
    return EffectiveFields(geom, values)


def product_state(geom: ClusterGeometry, tilt: float = 0.0) -> np.ndarray:
    """Pure product state, all spins down, optionally tilted toward +x.

    ``tilt`` is the polar angle away from -z; tilt = 0 is the exact down
    state used for linear-response runs (the probe selects the branch).
    """
    single = np.array([np.sin(tilt / 2.0), np.cos(tilt / 2.0)], dtype=complex)
    psi = np.array([1.0 + 0.0j])
    for _ in range(geom.n_sites):
        psi = np.kron(psi, single)
    return psi


def down_state_dm(geom: ClusterGeometry, tilt: float = 0.0) -> np.ndarray:
    psi = product_state(geom, tilt)
    return np.outer(psi, psi.conj())


@dataclass
class EvolutionRecord:
    """Sampled site magnetizations of one master-equation run."""

    times: np.ndarray  # (n_samples,)
    mags: np.ndarray  # (n_samples, n_sites, 3) for axes x, y, z
    diagnostics: dict = field(default_factory=dict)

    CSV_SCHEMA = "spincam-evolution v1"

    def site_series(self, site: int, axis: str) -> np.ndarray:
        return self.mags[:, site, AXES.index(axis)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {self.CSV_SCHEMA}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "site", "sx", "sy", "sz"])
            for i, t in enumerate(self.times):
                for j in range(self.mags.shape[1]):
                    writer.writerow(
                        [f"{t:.10g}", j]
                        + [f"{self.mags[i, j, k]:.12g}" for k in range(3)]
                    )

    @classmethod
    def from_csv(cls, path) -> "EvolutionRecord":
        with open(path) as fh:
            header = fh.readline()
            if cls.CSV_SCHEMA not in header:
                raise PreconditionError(f"unexpected schema line: {header.strip()!r}")
            rows = list(csv.reader(fh))
        body = rows[1:]
        n_sites = max(int(r[1]) for r in body) + 1
        times = sorted({float(r[0]) for r in body})
        index = {t: i for i, t in enumerate(times)}
        mags = np.zeros((len(times), n_sites, 3))
        for r in body:
            mags[index[float(r[0])], int(r[1])] = [float(v) for v in r[2:5]]
        return cls(times=np.array(times), mags=mags)


class CmfIntegrator:
    """RK4 integrator for the mean-field master equation of one cluster.

    The state is carried as a packed real buffer [R | S] with
    rho = R + i*S; see :mod:`spincam._kernels` for the layout.  Boundary
    fields are recomputed from the stage input at every RK stage unless
    ``frozen_fields`` pins them.
    """

    def __init__(
        self,
        geom: ClusterGeometry,
        model: ModelSpec,
        frozen_fields: EffectiveFields | None = None,
    ):
        if geom.n_sites > MAX_ME_SITES:
            raise CapacityError(
                f"density-matrix evolution capped at {MAX_ME_SITES} sites, "
                f"cluster {geom.label} has {geom.n_sites}"
            )
        self.geom = geom
        self.model = model
        self.frozen = frozen_fields
        self.ops = local_ops(geom.lx, geom.ly)
        ops = self.ops
        L = geom.n_sites
        dim = ops.dim
        self.dim = dim
        ar = ops.states

        # Regular sparse pattern of the symmetric Hamiltonian part A:
        # slot 0 diagonal, slots 1..L single flips, then one slot per bond.
        nnz = 1 + L + len(geom.bonds)
        indices = np.empty((dim, nnz), dtype=np.int64)
        indices[:, 0] = ar
        for j in range(L):
            indices[:, 1 + j] = ops.flip[j]
        for ib, (j, k) in enumerate(geom.bonds):
            indices[:, 1 + L + ib] = ar ^ ops.bit[j] ^ ops.bit[k]
        self.a_indices = indices
        self.a_data = np.zeros((dim, nnz))

        # Static contributions.
        diag_static = np.zeros(dim)
        x_static = np.zeros(L)
        y_static = np.zeros(L)
        if model.kind == "tfi":
            diag_static += 0.5 * model.g * ops.zsign.sum(axis=0)
        else:
            cz = model.bond_coupling("z")
            for (j, k) in geom.bonds:
                diag_static += cz * ops.zsign[j] * ops.zsign[k]
        if model.probe is not None:
            if model.probe.axis == "x":
                x_static += model.probe.delta
            else:
                y_static += model.probe.delta
        self.diag_static = diag_static
        self.x_static = x_static

        bond_static = np.zeros((dim, len(geom.bonds)))
        cx = model.bond_coupling("x")
        cy = model.bond_coupling("y")
        for ib, (j, k) in enumerate(geom.bonds):
            bond_static[:, ib] = cx
            if cy != 0.0:
                bond_static[:, ib] += cy * np.real(ops.ysign[j] * ops.ysign[k])
        self.a_data[:, 1 + L:] = bond_static

        # Antisymmetric part B from single-site sigma^y terms: sy_j = i*K_j
        # with K_j[a, a^bit_j] = -zsign_j[a].
        self.need_b = model.kind == "xyz" or np.any(y_static != 0.0)
        self.y_static = y_static
        if self.need_b:
            self.b_indices = ops.flip.T.copy()
            self.b_data = np.zeros((dim, L))

        # Dissipator: decay weights and site bit masks for the gain term.
        self.w = 0.5 * model.gamma * ops.n_up
        self.bits = ops.bit.copy()

        # Mirror sites whose magnetizations feed the boundary fields.
        self.mirrors = sorted({k for (_, k) in geom.boundary_map})

        self._buffers = [np.empty((dim, 2 * dim)) for _ in range(4)]
        self._hbuf = np.empty((dim, 2 * dim))
        self._hbbuf = np.empty((dim, 2 * dim)) if self.need_b else None

        if self.frozen is not None:
            self._apply_fields(self.frozen)

    # -- state packing ------------------------------------------------

    def pack(self, rho: np.ndarray) -> np.ndarray:
        y = np.empty((self.dim, 2 * self.dim))
        y[:, : self.dim] = rho.real
        y[:, self.dim:] = rho.imag
        return y

    def unpack(self, y: np.ndarray) -> np.ndarray:
        return y[:, : self.dim] + 1j * y[:, self.dim:]

    # -- fields ---------------------------------------------------------

    def magnetization(self, y: np.ndarray, site: int, axis: str) -> float:
        dim = self.dim
        ar = self.ops.states
        fl = self.ops.flip[site]
        if axis == "x":
            return float(y[ar, fl].sum())
        if axis == "y":
            # tr(sy rho) = -sum_a K[a] * S[a^b, a];  K = -zsign
            return float((self.ops.zsign[site] * y[fl, dim + ar]).sum())
        return float((self.ops.zsign[site] * y[ar, ar]).sum())

    def fields_from_state(self, y: np.ndarray) -> EffectiveFields:
        mags = {
            axis: {k: self.magnetization(y, k, axis) for k in self.mirrors}
            for axis in self.model.axes
        }
        values = {
            axis: np.array([mags[axis][k] for (_, k) in self.geom.boundary_map])
            for axis in self.model.axes
        }
        return EffectiveFields(self.geom, values)

    def _apply_fields(self, fields: EffectiveFields) -> None:
        """Write field-dependent Hamiltonian data into the slot arrays."""
        model = self.model
        L = self.geom.n_sites
        xtot = (
            fields.site_totals("x") * model.bond_coupling("x")
            if "x" in fields.entry_values
            else np.zeros(L)
        )
        for j in range(L):
            self.a_data[:, 1 + j] = self.x_static[j] + xtot[j]
        diag = self.diag_static
        if model.kind == "xyz" and "z" in fields.entry_values:
            ztot = fields.site_totals("z") * model.bond_coupling("z")
            if np.any(ztot != 0.0):
                diag = diag + ztot @ self.ops.zsign
        self.a_data[:, 0] = diag
        if self.need_b:
            ytot = (
                fields.site_totals("y") * model.bond_coupling("y")
                if "y" in fields.entry_values
                else np.zeros(L)
            )
            for j in range(L):
                self.b_data[:, j] = -(self.y_static[j] + ytot[j]) * self.ops.zsign[j]

    def _update_fields(self, y: np.ndarray) -> None:
        if self.frozen is None:
            self._apply_fields(self.fields_from_state(y))

    # -- stepping ---------------------------------------------------------

    def _stage(self, y, y0, acc, wk, reset, ca, cb, ynext) -> None:
        self._update_fields(y)
        _kernels.mm_pattern(self.a_indices, self.a_data, y, self._hbuf)
        if self.need_b:
            _kernels.mm_pattern(self.b_indices, self.b_data, y, self._hbbuf)
            _kernels.rk_stage_b(
                self._hbuf, self._hbbuf, y, self.w, self.bits, self.model.gamma,
                y0, acc, wk, reset, ca, cb, ynext,
            )
        else:
            _kernels.rk_stage(
                self._hbuf, y, self.w, self.bits, self.model.gamma,
                y0, acc, wk, reset, ca, cb, ynext,
            )

    def step(self, y0: np.ndarray, dt: float) -> np.ndarray:
        """Advance the packed state by one RK4 step (in place on y0)."""
        ya, yb, acc, _ = self._buffers
        self._stage(y0, y0, acc, 1.0 / 6.0, 0.0, dt / 2.0, 0.0, ya)
        self._stage(ya, y0, acc, 1.0 / 3.0, 1.0, dt / 2.0, 0.0, yb)
        self._stage(yb, y0, acc, 1.0 / 3.0, 1.0, dt, 0.0, ya)
        self._stage(ya, y0, acc, 1.0 / 6.0, 1.0, 0.0, dt, y0)
        return y0

    def rhs_max(self, y: np.ndarray) -> float:
        """max |d rho / dt| at the given state (residual diagnostic)."""
        ya, yb, acc, scratch = self._buffers
        self._stage(y, y, acc, 1.0, 0.0, 0.0, 0.0, scratch)
        return float(np.abs(acc).max())


def _check_state(rho: np.ndarray, t: float, check_positivity: bool) -> dict:
    tr = np.trace(rho).real
    herm_dev = float(np.abs(rho - rho.conj().T).max())
    info = {"trace_dev": abs(tr - 1.0), "herm_dev": herm_dev, "min_eig": None}
    if info["trace_dev"] >= TRACE_TOL:
        raise SolverError(f"trace deviation {info['trace_dev']:.3e} at t={t:.4g}")
    if herm_dev >= HERMITICITY_TOL:
        raise SolverError(f"hermiticity deviation {herm_dev:.3e} at t={t:.4g}")
    if check_positivity:
        shift = POSITIVITY_TOL * (1 + 1e-9)
        try:
            np.linalg.cholesky(rho + shift * np.eye(rho.shape[0]))
        except np.linalg.LinAlgError:
            min_eig = float(np.linalg.eigvalsh(rho).min())
            info["min_eig"] = min_eig
            if min_eig < -POSITIVITY_TOL:
                raise SolverError(
                    f"positivity violation: min eigenvalue {min_eig:.3e} at t={t:.4g}"
                ) from None
    return info


def evolve_cmf(
    rho0: np.ndarray,
    geom: ClusterGeometry,
    model: ModelSpec,
    t_final: float,
    dt: float,
    sample_every: int = 10,
    frozen_fields: EffectiveFields | None = None,
    check_positivity: bool = True,
) -> tuple[EvolutionRecord, np.ndarray]:
    """Integrate the mean-field master equation and sample magnetizations.

    Returns the sampled record and the final density matrix.  Raises
    SolverError when a state invariant (trace, hermiticity, positivity)
    drifts beyond tolerance, which also catches RK4 instability.
    """
    if dt <= 0 or t_final <= 0:
        raise PreconditionError("t_final and dt must be positive")
    integ = CmfIntegrator(geom, model, frozen_fields=frozen_fields)
    n_steps = int(round(t_final / dt))
    y = integ.pack(np.asarray(rho0, dtype=complex))

    L = geom.n_sites
    sample_steps = list(range(0, n_steps + 1, sample_every))
    if sample_steps[-1] != n_steps:
        sample_steps.append(n_steps)
    times = np.array([s * dt for s in sample_steps])
    mags = np.zeros((len(sample_steps), L, 3))

    worst = {"trace_dev": 0.0, "herm_dev": 0.0}
    isample = 0
    for step in range(n_steps + 1):
        if step == sample_steps[isample]:
            rho = integ.unpack(y)
            info = _check_state(rho, step * dt, check_positivity)
            worst["trace_dev"] = max(worst["trace_dev"], info["trace_dev"])
            worst["herm_dev"] = max(worst["herm_dev"], info["herm_dev"])
            for j in range(L):
                for k, axis in enumerate(AXES):
                    mags[isample, j, k] = integ.magnetization(y, j, axis)
            if np.abs(mags[isample]).max() > 1 + MAG_TOL:
                raise SolverError(
                    f"magnetization bound violated at t={step * dt:.4g}: "
                    f"max |m| = {np.abs(mags[isample]).max():.6f}"
                )
            isample += 1
        if step < n_steps:
            integ.step(y, dt)

    record = EvolutionRecord(times=times, mags=mags)
    record.diagnostics = {
        **worst,
        "residual_final": integ.rhs_max(y),
        "dt": dt,
        "t_final": t_final,
        "n_steps": n_steps,
    }
    return record, integ.unpack(y)


def vectorized_generator(h: np.ndarray, jumps: list[np.ndarray]) -> sp.csr_matrix:
    """Sparse generator acting on row-major vec(rho)."""
    dim = h.shape[0]
    eye = sp.identity(dim, format="csr", dtype=complex)
    hs = sp.csr_matrix(h)
    gen = -1j * (sp.kron(hs, eye) - sp.kron(eye, hs.T))
    for l_op in jumps:
        ls = sp.csr_matrix(l_op)
        ldl = sp.csr_matrix(l_op.conj().T @ l_op)
        gen = gen + sp.kron(ls, ls.conj())
        gen = gen - 0.5 * (sp.kron(ldl, eye) + sp.kron(eye, ldl.T))
    return gen.tocsr()


def null_space_oracle(
    h: np.ndarray,
    jumps: list[np.ndarray],
    degeneracy_rtol: float = 1e-8,
) -> np.ndarray:
    """Steady state for fixed fields via the vectorized generator.

    Dense SVD null space for dim <= 16, shift-inverted Arnoldi for larger
    dimensions (capped at dim 64).  Reports a degenerate null space rather
    than resolving it.
    """
    dim = h.shape[0]
    if dim > 64:
        raise CapacityError(f"null-space oracle capped at dim 64, got {dim}")
    gen = vectorized_generator(h, jumps)
    scale = max(np.abs(gen).max(), 1.0)
    if dim <= 16:
        u, s, vh = np.linalg.svd(gen.toarray())
        null_mask = s < degeneracy_rtol * scale
        if null_mask.sum() > 1:
            raise DegenerateSteadyStateError(
                f"null space dimension {null_mask.sum()} (singular values "
                f"{s[-int(null_mask.sum()):]})"
            )
        vec = vh[-1].conj()
    else:
        vals, vecs = spla.eigs(gen, k=2, sigma=1e-9 * scale, which="LM")
        order = np.argsort(np.abs(vals))
        if np.abs(vals[order[1]]) < degeneracy_rtol * scale:
            raise DegenerateSteadyStateError(
                f"two generator eigenvalues near zero: {vals[order]}"
            )
        vec = vecs[:, order[0]]
    rho = vec.reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr) < 1e-12:
        raise SolverError("null vector has vanishing trace; not a state")
    return rho / tr
