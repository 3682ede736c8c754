"""Linear-static thin-shell finite-element oracle.

Solves K u = f for uniform self-weight on a triangulated shell with all six
DOFs fixed at support nodes, then recovers membrane strains, stress
resultants, curvature changes, and bending moments per element.  The element
is a flat facet combining a constant-strain membrane with a discrete-
Kirchhoff bending triangle plus a small drilling penalty; tensors are
reported in a local frame whose first axis is the projection of global x onto
the element plane, which keeps components comparable across shallow shells.

All strain/moment storage uses tensor components (the 12-entries are halves
of the engineering values); work sums restore the engineering pairing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .grid import FieldStack, HeightField, WorkDecomposition, rasterize
from .mesh import MeshError, ShellMesh, canonicalize_winding, triangulate_structured

DRILL_FACTOR = 1e-4  # drilling penalty stiffness as a fraction of E*h


class SolveError(RuntimeError):
    """The assembled system could not be solved to contract tolerances."""


class SupportDetectionError(ValueError):
    """No plausible ground supports were found on a heightfield."""


@dataclass(frozen=True)
class Material:
    """Isotropic shell material and loading constants.

    Defaults are structural concrete: E = 3.0e10 Pa, nu = 0.2,
    rho = 2500 kg/m^3, thickness h = 0.1 m, g = 9.81 m/s^2.
    """

    e_mod: float = 3.0e10
    nu: float = 0.2
    rho: float = 2500.0
    h: float = 0.1
    g: float = 9.81

    def __post_init__(self) -> None:
        if self.e_mod <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if self.h <= 0.0:
            raise ValueError("thickness must be positive")

    def check_slenderness(self, min_span: float) -> None:
        """Thin-shell bound: thickness below 1/20 of the smallest span."""
        if self.h / min_span >= 1.0 / 20.0:
            raise ValueError(
                f"thickness {self.h} m violates the thin-shell bound for "
                f"span {min_span} m (h/span must stay below 1/20)")

    def membrane_matrix(self) -> np.ndarray:
        c = self.e_mod * self.h / (1.0 - self.nu ** 2)
        return c * np.array([[1.0, self.nu, 0.0],
                             [self.nu, 1.0, 0.0],
                             [0.0, 0.0, (1.0 - self.nu) / 2.0]])

    def bending_matrix(self) -> np.ndarray:
        c = self.e_mod * self.h ** 3 / (12.0 * (1.0 - self.nu ** 2))
        return c * np.array([[1.0, self.nu, 0.0],
                             [self.nu, 1.0, 0.0],
                             [0.0, 0.0, (1.0 - self.nu) / 2.0]])

    def to_dict(self) -> dict:
        return {"e_mod": self.e_mod, "nu": self.nu, "rho": self.rho,
                "h": self.h, "g": self.g}

    @classmethod
    def from_dict(cls, d: dict) -> "Material":
        return cls(**{k: float(v) for k, v in d.items()})


def f_z_constant(mat: Material) -> float:
    """Uniform self-weight load per unit surface area, rho*g*h."""
    return mat.rho * mat.g * mat.h


@dataclass
class FEResult:
    """Equilibrium solution of one shell.

    ``displacements`` are global nodal DOFs [ux, uy, uz, rx, ry, rz].
    ``node_fields`` holds the 13 solution channels at nodes (area-weighted
    element-to-node averages; deflection positive downward), ready for
    rasterization.  ``work`` carries the FE-consistent totals; its
    ``mf_field`` is per element here, not a grid.
    """

    displacements: np.ndarray
    node_fields: np.ndarray
    elem_eps_m: np.ndarray
    elem_f: np.ndarray
    elem_kappa: np.ndarray
    elem_m: np.ndarray
    elem_areas: np.ndarray
    work: WorkDecomposition
    residual_rel: float
    reaction_balance: float
    supports: np.ndarray


def _assemble(mesh: ShellMesh, mat: Material) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Assemble the global stiffness and the lumped self-weight load vector."""
    drill_k = DRILL_FACTOR * mat.e_mod * mat.h
    ke, _, areas = kernels.element_stiffness_batch(
        mesh.nodes, mesh.tris, mat.membrane_matrix(), mat.bending_matrix(), drill_k)
    ne = mesh.n_tris
    ndof = 6 * mesh.n_nodes
    dofmap = (6 * mesh.tris[:, :, None] + np.arange(6)[None, None, :]).reshape(ne, 18)
    rows = dofmap[:, np.repeat(np.arange(18), 18)].ravel()
    cols = dofmap[:, np.tile(np.arange(18), 18)].ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()

    f = np.zeros(ndof)
    w = f_z_constant(mat) * areas / 3.0
    for k in range(3):
        np.add.at(f, 6 * mesh.tris[:, k] + 2, -w)
    return K, f, areas


def assemble_and_solve(mesh: ShellMesh, mat: Material) -> FEResult:
    """Solve the shell under self-weight with supports fully clamped.

    Raises :class:`SolveError` when the system is singular or the equilibrium
    residual exceeds 1e-8 relative.
    """
    if mesh.supports.size == 0:
        raise MeshError("mesh has no support nodes")
    extent = mesh.nodes.max(axis=0) - mesh.nodes.min(axis=0)
    mat.check_slenderness(float(min(extent[0], extent[1])))
    tris = canonicalize_winding(mesh.nodes, mesh.tris)
    mesh = ShellMesh(mesh.nodes, tris, mesh.supports, mesh.elem_size)

    K, f, areas = _assemble(mesh, mat)
    ndof = 6 * mesh.n_nodes
    fixed = np.zeros(ndof, dtype=bool)
    for d in range(6):
        fixed[6 * mesh.supports + d] = True
    free = np.flatnonzero(~fixed)

    Kff = K[free][:, free].tocsc()
    try:
        lu = spla.splu(Kff)
    except RuntimeError as exc:
        raise SolveError(f"stiffness factorization failed: {exc}") from exc
    uf = lu.solve(f[free])
    uf += lu.solve(f[free] - Kff @ uf)  # one refinement step for stiff systems
    if not np.all(np.isfinite(uf)):
        raise SolveError("solution contains non-finite values "
                         "(insufficient constraints?)")

    u = np.zeros(ndof)
    u[free] = uf
    load_norm = np.linalg.norm(f[free])
    residual_rel = float(np.linalg.norm(Kff @ uf - f[free]) / max(load_norm, 1e-300))
    if residual_rel > 1e-8:
        raise SolveError(f"equilibrium residual {residual_rel:.2e} exceeds 1e-8")

    # reactions must balance the applied weight
    reactions = (K @ u - f)[fixed]
    rz = reactions.reshape(-1, 6)[:, 2].sum() if reactions.size else 0.0
    total_load = f.reshape(-1, 6)[:, 2].sum()
    reaction_balance = float(abs(rz + total_load) / max(abs(total_load), 1e-300))

    un = u.reshape(mesh.n_nodes, 6)
    drill_k = DRILL_FACTOR * mat.e_mod * mat.h
    eps_m, f_res, kappa, m_res, w_memb_e, w_flex_e = kernels.recover_element_fields(
        mesh.nodes, mesh.tris, un, mat.membrane_matrix(), mat.bending_matrix(), drill_k)

    w_memb = float(w_memb_e.sum())
    w_flex = float(w_flex_e.sum())
    w_ext = float(f @ u)
    delta_p = w_memb + w_flex - w_ext

    # element membrane factor from the physical work densities
    memb_dens = np.maximum(np.einsum("ni,ni->n", f_res, eps_m), 0.0)
    flex_dens = np.maximum(np.einsum("ni,ni->n", m_res, kappa), 0.0)
    total_dens = memb_dens + flex_dens
    defined = total_dens > 0.0
    elem_mf = np.zeros(mesh.n_tris)
    elem_mf[defined] = np.clip(memb_dens[defined] / total_dens[defined], 0.0, 1.0)
    if defined.any():
        wsum = areas[defined].sum()
        mf_mean = float((elem_mf[defined] * areas[defined]).sum() / wsum)
    else:
        mf_mean = float("nan")
    work = WorkDecomposition(w_memb=w_memb, w_flex=w_flex, w_ext=w_ext,
                             delta_p=delta_p, mf_field=elem_mf,
                             mf_defined=defined, mf_mean=mf_mean)

    # tensor storage: halve the engineering 12-entries
    eps_t = eps_m.copy()
    eps_t[:, 2] *= 0.5
    kap_t = kappa.copy()
    kap_t[:, 2] *= 0.5

    node_fields = np.zeros((13, mesh.n_nodes))
    node_fields[0] = -un[:, 2]  # deflection positive in the gravity direction
    elem_stack = np.concatenate([eps_t, f_res, kap_t, m_res], axis=1)  # (ne, 12)
    wsum = np.zeros(mesh.n_nodes)
    acc = np.zeros((mesh.n_nodes, 12))
    for k in range(3):
        np.add.at(wsum, mesh.tris[:, k], areas)
        np.add.at(acc, mesh.tris[:, k], areas[:, None] * elem_stack)
    node_fields[1:] = (acc / np.maximum(wsum[:, None], 1e-300)).T

    return FEResult(
        displacements=un, node_fields=node_fields,
        elem_eps_m=eps_t, elem_f=f_res, elem_kappa=kap_t, elem_m=m_res,
        elem_areas=areas, work=work, residual_rel=residual_rel,
        reaction_balance=reaction_balance, supports=mesh.supports.copy(),
    )


def detect_supports(hf: HeightField, rel_threshold: float = 0.15) -> np.ndarray:
    """Find ground-support cells: mask-boundary cells with near-ground heights.

    Returns a boolean grid.  Raises :class:`SupportDetectionError` when the
    heightfield has no valid cells or no boundary cell sits below the
    threshold (15% of the apex by default).
    """
    m = hf.mask.astype(bool)
    if not m.any():
        raise SupportDetectionError("heightfield has no valid cells")
    interior = m.copy()
    interior[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1]
                            & m[1:-1, :-2] & m[1:-1, 2:])
    interior[0, :] = False
    interior[-1, :] = False
    interior[:, 0] = False
    interior[:, -1] = False
    boundary = m & ~interior
    zmax = hf.z[m].max()
    supports = boundary & (hf.z <= rel_threshold * zmax)
    if not supports.any():
        raise SupportDetectionError(
            "no boundary cells near the ground; specify supports manually")
    return supports


def analyze_heightfield(hf: HeightField, mat: Material,
                        rel_threshold: float = 0.15) -> tuple[FEResult, FieldStack]:
    """FE round-trip of a heightfield: triangulate, solve, rasterize back.

    Valid cell centers become mesh nodes; supports are auto-detected as
    mask-boundary cells near the ground.  The returned stack's mask is the
    coverage of the round-trip rasterization (a subset of the input mask).
    """
    hf.validate()
    support_cells = detect_supports(hf, rel_threshold)
    spec = hf.spec
    xs, ys = spec.cell_centers()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    coords = np.stack([X, Y, hf.z], axis=2)
    alive = hf.mask.astype(bool)
    tris = triangulate_structured(coords, alive)
    if tris.shape[0] == 0:
        raise MeshError("valid region is too fragmented to triangulate")

    index = -np.ones(alive.shape, dtype=np.int64)
    index[alive] = np.arange(int(alive.sum()))
    nodes = coords[alive]
    supports = index[support_cells & alive]

    # drop slivers produced by ragged mask boundaries
    elem_size = min(spec.spacing_x, spec.spacing_y)
    mina = ShellMesh(nodes, tris, supports, elem_size).min_angles_deg()
    if np.any(mina <= 5.0):
        tris = tris[mina > 5.0]
        if tris.shape[0] == 0:
            raise MeshError("all triangles degenerate after sliver removal")

    # isolated cells yield unreferenced nodes; compact them away
    used = np.unique(tris)
    if used.size < nodes.shape[0]:
        remap = -np.ones(nodes.shape[0], dtype=np.int64)
        remap[used] = np.arange(used.size)
        nodes = nodes[used]
        tris = remap[tris]
        supports = remap[supports]
        supports = supports[supports >= 0]

    mesh = ShellMesh(nodes, tris, supports, elem_size)
    result = assemble_and_solve(mesh, mat)
    _, stack = rasterize(mesh, result.node_fields, spec)
    return result, stack
