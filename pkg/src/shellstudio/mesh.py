"""Triangulated shell surfaces: construction helpers and ASCII STL/OBJ exchange.

Meshes are height-map surfaces: every triangle projects to a proper
(positive-area) triangle in the xy plane.  Triangles are stored with
counter-clockwise winding in xy projection; ``canonicalize_winding`` enforces
that and doubles as the fold detector for non-projectable input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    """Geometry violates the mesh contract (degenerate, folded, unsupported)."""


@dataclass
class ShellMesh:
    """Triangulated shell surface.

    Parameters
    ----------
    nodes : (nn, 3) float64
        Coordinates in meters.
    tris : (ne, 3) int64
        Node indices, counter-clockwise in xy projection.
    supports : (ns,) int64
        Indices of nodes whose six DOFs are fixed.
    elem_size : float
        Characteristic element edge length in meters.
    net : object, optional
        Force-density net (edges, densities) the mesh was form-found on,
        kept so later cuts can re-equilibrate; None for imported meshes.
    """

    nodes: np.ndarray
    tris: np.ndarray
    supports: np.ndarray
    elem_size: float
    net: object | None = None

    def __post_init__(self) -> None:
        self.nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        self.tris = np.ascontiguousarray(self.tris, dtype=np.int64)
        self.supports = np.ascontiguousarray(self.supports, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_tris(self) -> int:
        return self.tris.shape[0]

    def xy_signed_areas(self) -> np.ndarray:
        p = self.nodes[self.tris]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def min_angles_deg(self) -> np.ndarray:
        """Smallest interior angle of each triangle, measured in 3D."""
        p = self.nodes[self.tris]
        angles = np.empty((self.n_tris, 3))
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            cosv = np.einsum("ni,ni->n", a, b) / np.maximum(na * nb, 1e-300)
            angles[:, k] = np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0)))
        return angles.min(axis=1)

    def validate(self) -> None:
        if self.n_nodes < 3 or self.n_tris < 1:
            raise MeshError("mesh is empty")
        if self.tris.min() < 0 or self.tris.max() >= self.n_nodes:
            raise MeshError("triangle indices out of range")
        if self.supports.size == 0:
            raise MeshError("support set is empty")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinates")
        areas = self.xy_signed_areas()
        if np.any(areas <= 0.0):
            raise MeshError(f"{int((areas <= 0).sum())} triangles are folded or "
                            "degenerate in xy projection")
        mina = self.min_angles_deg()
        if np.any(mina <= 5.0):
            raise MeshError(f"{int((mina <= 5).sum())} triangles have interior "
                            "angles below 5 degrees")

    def copy(self) -> "ShellMesh":
        return ShellMesh(self.nodes.copy(), self.tris.copy(),
                         self.supports.copy(), self.elem_size, self.net)


def canonicalize_winding(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Return triangles wound counter-clockwise in xy projection.

    A consistently-built height-map mesh has uniformly signed projected areas;
    mixed signs mean the surface folds over itself (not a one-to-one height
    map) and are rejected.
    """
    p = nodes[tris]
    areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                   - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    if np.any(areas == 0.0):
        raise MeshError("degenerate triangle with zero projected area")
    neg = areas < 0.0
    if neg.any() and not neg.all():
        raise MeshError("mixed triangle orientations: surface is not a "
                        "one-to-one height map over xy")
    out = tris.copy()
    if neg.all():
        out = out[:, [0, 2, 1]]
    return out


def triangulate_structured(coords: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Triangulate a structured quad grid of points, skipping dead nodes.

    Parameters
    ----------
    coords : (nr, nc, 3)
        Grid point coordinates.
    alive : (nr, nc) bool
        Points that exist.  Quads with all four corners alive are split along
        their shorter 3D diagonal; quads with exactly three alive corners
        contribute that single triangle, which keeps cut boundaries tight.

    Returns
    -------
    (ne, 3) int64 triangle array indexing the alive nodes in row-major order.
    """
    nr, nc = alive.shape
    index = -np.ones((nr, nc), dtype=np.int64)
    index[alive] = np.arange(int(alive.sum()))
    tris: list[list[int]] = []
    for i in range(nr - 1):
        for j in range(nc - 1):
            quad = ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1))
            flags = [alive[r, c] for r, c in quad]
            n_alive = sum(flags)
            if n_alive < 3:
                continue
            ids = [index[r, c] for r, c in quad]
            if n_alive == 3:
                tri = [ids[k] for k in range(4) if flags[k]]
                tris.append(tri)
                continue
            d02 = np.linalg.norm(coords[quad[0]] - coords[quad[2]])
            d13 = np.linalg.norm(coords[quad[1]] - coords[quad[3]])
            if d02 <= d13:
                tris.append([ids[0], ids[1], ids[2]])
                tris.append([ids[0], ids[2], ids[3]])
            else:
                tris.append([ids[0], ids[1], ids[3]])
                tris.append([ids[1], ids[2], ids[3]])
    if not tris:
        return np.zeros((0, 3), dtype=np.int64)
    return np.asarray(tris, dtype=np.int64)


def subdivide(mesh: ShellMesh, levels: int = 1) -> ShellMesh:
    """Uniformly refine a mesh by edge-midpoint subdivision.

    Each level splits every triangle into four with new nodes at edge
    midpoints, leaving the piecewise-linear surface itself unchanged.  A
    midpoint becomes a support only when both its edge endpoints are supports
    (it then lies on a grounded arc).  The force-density net, if any, is
    dropped: the refined mesh is an analysis mesh, not a form-finding one.
    """
    if levels < 0:
        raise MeshError("subdivision level must be non-negative")
    nodes, tris = mesh.nodes, mesh.tris
    is_support = np.zeros(mesh.n_nodes, dtype=bool)
    is_support[mesh.supports] = True
    for _ in range(levels):
        e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        mid = 0.5 * (nodes[uniq[:, 0]] + nodes[uniq[:, 1]])
        mid_id = nodes.shape[0] + np.arange(uniq.shape[0])
        ne = tris.shape[0]
        m01 = mid_id[inv[:ne]]
        m12 = mid_id[inv[ne:2 * ne]]
        m20 = mid_id[inv[2 * ne:]]
        tris = np.concatenate([
            np.stack([tris[:, 0], m01, m20], axis=1),
            np.stack([tris[:, 1], m12, m01], axis=1),
            np.stack([tris[:, 2], m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ])
        nodes = np.concatenate([nodes, mid])
        is_support = np.concatenate(
            [is_support, is_support[uniq[:, 0]] & is_support[uniq[:, 1]]])
    return ShellMesh(nodes, tris, np.flatnonzero(is_support),
                     mesh.elem_size / 2 ** levels)


# ---------------------------------------------------------------------------
# ASCII interchange formats, units are meters
# ---------------------------------------------------------------------------


def write_stl(mesh: ShellMesh, path: str, name: str = "shell") -> None:
    """Write an ASCII STL file (facet normals recomputed from geometry)."""
    p = mesh.nodes[mesh.tris]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.maximum(norms, 1e-300)
    lines = [f"solid {name}"]
    for f in range(mesh.n_tris):
        lines.append(f"  facet normal {n[f, 0]:.9e} {n[f, 1]:.9e} {n[f, 2]:.9e}")
        lines.append("    outer loop")
        for v in range(3):
            x, y, z = p[f, v]
            lines.append(f"      vertex {x:.9e} {y:.9e} {z:.9e}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_stl(path: str) -> ShellMesh:
    """Read an ASCII STL file, merging exactly-equal vertices.

    The imported mesh has no support information; callers must set supports
    before analysis.
    """
    verts: list[tuple[float, float, float]] = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] == "vertex":
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
    if not verts or len(verts) % 3 != 0:
        raise MeshError(f"{path}: not a valid ASCII STL (found {len(verts)} vertices)")
    arr = np.asarray(verts)
    uniq, inv = np.unique(arr, axis=0, return_inverse=True)
    tris = inv.reshape(-1, 3).astype(np.int64)
    size = float(np.median(np.linalg.norm(
        uniq[tris[:, 0]] - uniq[tris[:, 1]], axis=1)))
    return ShellMesh(uniq, tris, np.zeros(0, dtype=np.int64), size)


def write_obj(mesh: ShellMesh, path: str) -> None:
    """Write an ASCII OBJ file (1-based vertex indices)."""
    lines = []
    for x, y, z in mesh.nodes:
        lines.append(f"v {x:.9e} {y:.9e} {z:.9e}")
    for a, b, c in mesh.tris + 1:
        lines.append(f"f {a} {b} {c}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path: str) -> ShellMesh:
    """Read an ASCII OBJ file (v/f records; faces must be triangles)."""
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"{path}: only triangular faces are supported")
                faces.append(tuple(idx))
    if not verts or not faces:
        raise MeshError(f"{path}: no geometry found")
    nodes = np.asarray(verts)
    tris = np.asarray(faces, dtype=np.int64)
    size = float(np.median(np.linalg.norm(
        nodes[tris[:, 0]] - nodes[tris[:, 1]], axis=1)))
    return ShellMesh(nodes, tris, np.zeros(0, dtype=np.int64), size)
