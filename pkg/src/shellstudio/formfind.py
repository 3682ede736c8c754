"""Funicular form finding by the force-density hanging-net analogy.

A square cable net, its boundary ring held in plan and its four corners
pinned, hangs under uniform downward nodal loads; fixing each edge's
force-to-length ratio makes the equilibrium linear.  The hanging solution is
inverted and rescaled to a target apex height, giving a standing
compression-dominated shell whose free edges arch between the corners.
Shape variety comes from per-edge force densities modulated by a small
bicubic control field, an optional circular hole, and corner trimming.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .mesh import MeshError, ShellMesh, triangulate_structured

APEX_RANGE = (1.5, 4.5)
HOLE_RADIUS_RANGE = (0.5, 2.5)
Q_BASE_RANGE = (0.5, 5.0)
CONTROL_RANGE = (0.5, 2.0)
TRIM_RANGE = (1.0, 1.8)


class FormFindError(RuntimeError):
    """The equilibrium system is singular or produced an unusable surface."""


@dataclass(frozen=True)
class Net:
    """Force-density net behind a form-found mesh.

    ``xy_pinned`` lists nodes held at their plan position during the xy
    equilibrium solves (outer ring, hole rim); they stay free vertically.
    ``hole`` is the (cx, cy, radius) of the plan hole, if any.
    """

    edges: np.ndarray
    q: np.ndarray
    xy_pinned: np.ndarray
    hole: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class NetSpec:
    """Hanging-net layout: resolution, footprint, optional hole, rng seed."""

    resolution: int = 41
    span_x: float = 10.0
    span_y: float = 10.0
    hole_center: tuple[float, float] | None = None
    hole_radius: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.resolution < 9:
            raise ValueError(f"net resolution must be >= 9, got {self.resolution}")
        if (self.hole_center is None) != (self.hole_radius is None):
            raise ValueError("hole_center and hole_radius must be given together")
        if self.hole_radius is not None:
            lo, hi = HOLE_RADIUS_RANGE
            if not (lo <= self.hole_radius <= hi):
                raise ValueError(f"hole radius must lie in [{lo}, {hi}] m")
            cx, cy = self.hole_center
            r = self.hole_radius
            if not (r < cx < self.span_x - r and r < cy < self.span_y - r):
                raise ValueError("hole must lie strictly inside the footprint")


@dataclass(frozen=True)
class FormParams:
    """Per-sample form parameters.

    ``control`` is a 4x4 grid of positive multipliers, bicubic-interpolated
    over the footprint and applied to the base force density at each edge
    midpoint.
    """

    q_base: float = 1.0
    control: tuple = ((1.0,) * 4,) * 4
    apex_height: float = 3.0
    trim_radius: float = 0.8

    def __post_init__(self) -> None:
        if self.q_base <= 0.0:
            raise ValueError("base force density must be positive")
        c = np.asarray(self.control, dtype=np.float64)
        if c.shape != (4, 4) or np.any(c <= 0.0):
            raise ValueError("control field must be a positive 4x4 grid")
        lo, hi = APEX_RANGE
        if not (lo <= self.apex_height <= hi):
            raise ValueError(f"apex height must lie in [{lo}, {hi}] m")
        if self.trim_radius < 0.0:
            raise ValueError("trim radius must be non-negative")

    def control_array(self) -> np.ndarray:
        return np.asarray(self.control, dtype=np.float64)


def sample_form(rng: np.random.Generator, hole_prob: float = 0.5,
                resolution: int = 41, span: float = 10.0) -> tuple[NetSpec, FormParams]:
    """Draw one (NetSpec, FormParams) pair for dataset generation."""
    trim_radius = float(rng.uniform(*TRIM_RANGE))
    hole_center = None
    hole_radius = None
    if rng.random() < hole_prob:
        lo, hi = HOLE_RADIUS_RANGE
        hole_radius = float(rng.uniform(lo, hi))
        margin = hole_radius + 0.5
        corners = np.asarray([[0.0, 0.0], [span, 0.0], [span, span], [0.0, span]])
        for _ in range(64):
            center = rng.uniform(margin, span - margin, size=2)
            # keep the rim clear of the corner trim cuts
            if np.linalg.norm(corners - center, axis=1).min() \
                    >= hole_radius + trim_radius + 0.5:
                break
        else:
            hole_center = hole_radius = None
        if hole_radius is not None:
            hole_center = (float(center[0]), float(center[1]))
    spec = NetSpec(resolution=resolution, span_x=span, span_y=span,
                   hole_center=hole_center, hole_radius=hole_radius)
    q_base = float(np.exp(rng.uniform(np.log(Q_BASE_RANGE[0]), np.log(Q_BASE_RANGE[1]))))
    control = np.exp(rng.uniform(np.log(CONTROL_RANGE[0]), np.log(CONTROL_RANGE[1]),
                                 size=(4, 4)))
    params = FormParams(
        q_base=q_base,
        control=tuple(tuple(float(v) for v in row) for row in control),
        apex_height=float(rng.uniform(*APEX_RANGE)),
        trim_radius=trim_radius,
    )
    return spec, params


def _control_multipliers(params: FormParams, spec: NetSpec,
                         points: np.ndarray) -> np.ndarray:
    """Bicubic control-field multipliers evaluated at xy points."""
    cx = np.linspace(0.0, spec.span_x, 4)
    cy = np.linspace(0.0, spec.span_y, 4)
    interp = RegularGridInterpolator((cx, cy), params.control_array(),
                                     method="cubic")
    return np.maximum(interp(points), 1e-3)


def _density_matrix(n_nodes: int, edges: np.ndarray, q: np.ndarray) -> sp.csr_matrix:
    """Force-density Laplacian D = C^T Q C of the net graph."""
    w = np.concatenate([q, q])
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    off = sp.coo_matrix((-w, (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def _check_connected(n_nodes: int, edges: np.ndarray, fixed: np.ndarray) -> None:
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)),
                        shape=(n_nodes, n_nodes))
    _, labels = csgraph.connected_components(adj, directed=False)
    free = np.setdiff1d(np.arange(n_nodes), fixed)
    if not set(labels[free].tolist()) <= set(labels[fixed].tolist()):
        raise FormFindError("net is disconnected from its supports; "
                            "equilibrium system is singular")


def _solve_coordinate(D: sp.csr_matrix, fixed: np.ndarray,
                      fixed_vals: np.ndarray, load: np.ndarray) -> np.ndarray:
    """Equilibrium solve of one coordinate with the given constrained nodes.

    ``load`` is the per-free-node external load component.  The relative
    residual of the reduced system is held to 1e-9.
    """
    n = D.shape[0]
    free = np.setdiff1d(np.arange(n), fixed)
    Dff = D[free][:, free].tocsc()
    Dfc = D[free][:, fixed]
    rhs = load - Dfc @ fixed_vals
    sol = spla.spsolve(Dff, rhs)
    if not np.all(np.isfinite(sol)):
        raise FormFindError("force-density system is singular")
    ref = max(np.linalg.norm(rhs), 1e-300)
    rel = np.linalg.norm(Dff @ sol - rhs) / ref
    if rel > 1e-9:
        raise FormFindError(f"force-density residual {rel:.2e} exceeds 1e-9")
    out = np.zeros(n)
    out[fixed] = fixed_vals
    out[free] = sol
    return out


def form_find(spec: NetSpec, params: FormParams) -> ShellMesh:
    """Form-find a standing funicular shell from the hanging-net analogy.

    The outer boundary ring is held at its plan position (the sheet it stands
    in for carries in-plane stiffness), the four corners are pinned at z = 0,
    and all remaining coordinates come from the force-density equilibrium
    under uniform downward nodal loads.  The hanging solution is inverted and
    rescaled so its apex sits at ``params.apex_height``.  Raises
    :class:`FormFindError` for singular systems, unusable apex heights, or
    surfaces that fail the one-to-one height-map check.
    """
    r = spec.resolution
    gx = np.linspace(0.0, spec.span_x, r)
    gy = np.linspace(0.0, spec.span_y, r)
    X, Y = np.meshgrid(gx, gy, indexing="ij")

    alive = np.ones((r, r), dtype=bool)
    if spec.hole_center is not None:
        cx, cy = spec.hole_center
        alive &= (X - cx) ** 2 + (Y - cy) ** 2 >= spec.hole_radius ** 2

    index = -np.ones((r, r), dtype=np.int64)
    index[alive] = np.arange(int(alive.sum()))
    n_nodes = int(alive.sum())

    border = np.zeros((r, r), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True

    # Hole-rim nodes are pinned on a polygon circumscribing the hole circle;
    # otherwise the in-plane relaxation drags the rim far into the opening.
    rim = np.zeros(0, dtype=np.int64)
    rim_xy = np.zeros((0, 2))
    hole = None
    if spec.hole_center is not None:
        dead = ~alive
        near = np.zeros_like(alive)
        near[:-1, :] |= dead[1:, :]
        near[1:, :] |= dead[:-1, :]
        near[:, :-1] |= dead[:, 1:]
        near[:, 1:] |= dead[:, :-1]
        rim_mask = alive & near & ~border
        rim = index[rim_mask]
        if rim.size < 3:
            raise FormFindError("hole rim is degenerate")
        ang = np.arctan2(Y[rim_mask] - cy, X[rim_mask] - cx)
        gaps = np.diff(np.sort(ang))
        gap_max = max(float(gaps.max()) if gaps.size else 0.0,
                      float(2.0 * np.pi - (ang.max() - ang.min())))
        if gap_max >= np.pi / 2:
            raise FormFindError("hole rim is too sparse to close the circle")
        radius = spec.hole_radius / np.cos(gap_max / 2.0) * (1.0 + 1e-9)
        rim_xy = np.stack([cx + radius * np.cos(ang),
                           cy + radius * np.sin(ang)], axis=1)
        hole = (cx, cy, spec.hole_radius)

    edge_list = []
    mid_list = []
    for i in range(r):
        for j in range(r):
            if not alive[i, j]:
                continue
            if i + 1 < r and alive[i + 1, j]:
                edge_list.append((index[i, j], index[i + 1, j]))
                mid_list.append(((gx[i] + gx[i + 1]) / 2, gy[j]))
            if j + 1 < r and alive[i, j + 1]:
                edge_list.append((index[i, j], index[i, j + 1]))
                mid_list.append((gx[i], (gy[j] + gy[j + 1]) / 2))
    edges = np.asarray(edge_list, dtype=np.int64)
    mids = np.asarray(mid_list)
    q = params.q_base * _control_multipliers(params, spec, mids)

    ring = index[border & alive]
    corners = np.asarray([index[0, 0], index[r - 1, 0],
                          index[r - 1, r - 1], index[0, r - 1]], dtype=np.int64)

    _check_connected(n_nodes, edges, corners)
    D = _density_matrix(n_nodes, edges, q)
    xy_pinned = np.concatenate([ring, rim])
    fixed_x = np.concatenate([X[border & alive], rim_xy[:, 0]])
    fixed_y = np.concatenate([Y[border & alive], rim_xy[:, 1]])
    n_free_xy = n_nodes - xy_pinned.size
    x = _solve_coordinate(D, xy_pinned, fixed_x, np.zeros(n_free_xy))
    y = _solve_coordinate(D, xy_pinned, fixed_y, np.zeros(n_free_xy))

    load = -1.0
    apex_min = 1e-6 * max(spec.span_x, spec.span_y)
    for _ in range(3):
        z = _solve_coordinate(D, corners, np.zeros(4),
                              np.full(n_nodes - 4, load))
        if -z.min() > apex_min:
            break
        load *= 10.0  # degenerate sag: retry with a stronger load
    else:
        raise FormFindError("hanging net never reached a usable apex height")

    coords = np.stack([x, y, -z], axis=1)
    coords[:, 2] *= params.apex_height / coords[:, 2].max()

    grid_coords = np.zeros((r, r, 3))
    grid_coords[alive] = coords
    tris = triangulate_structured(grid_coords, alive)
    if tris.shape[0] == 0:
        raise FormFindError("triangulation is empty")

    p = coords[tris]
    areas2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
              - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    if np.any(areas2 <= 1e-12):
        raise FormFindError("form-found surface is not one-to-one over xy")
    _check_hole_clear(coords, tris, hole)

    elem_size = spec.span_x / (r - 1)
    return ShellMesh(coords, tris, corners, elem_size,
                     Net(edges, q, xy_pinned, hole))


def _check_hole_clear(nodes: np.ndarray, tris: np.ndarray,
                      hole: tuple[float, float, float] | None) -> None:
    """Verify no triangle edge cuts into the plan hole circle."""
    if hole is None:
        return
    cx, cy, radius = hole
    c = np.array([cx, cy])
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    a = nodes[e[:, 0], :2]
    ab = nodes[e[:, 1], :2] - a
    t = np.clip(((c - a) * ab).sum(axis=1) / (ab * ab).sum(axis=1), 0.0, 1.0)
    dmin = np.linalg.norm(a + t[:, None] * ab - c, axis=1).min()
    if dmin < radius * (1.0 - 1e-9):
        raise FormFindError(
            f"mesh edge cuts {radius - dmin:.3f} m into the plan hole")


def _move_with_fold_guard(nodes: np.ndarray, tris: np.ndarray,
                          ids: np.ndarray, goal: np.ndarray) -> None:
    """Move nodes toward goal xy positions without inverting any triangle.

    Each node backtracks along its own segment (current -> goal) until every
    incident triangle keeps at least 20% of its starting signed area; the
    starting layout is assumed fold-free, so full backtracking always
    succeeds.  Sweeps repeat because neighbouring moves interact.
    """
    start = nodes[ids, :2].copy()
    incident = [np.flatnonzero((tris == i).any(axis=1)) for i in ids]

    def min_area(tix: np.ndarray) -> float:
        p = nodes[tris[tix]]
        a2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
              - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        return float(a2.min())

    floor = np.asarray([0.2 * min_area(ix) for ix in incident])
    t = np.ones(ids.size)
    nodes[ids, :2] = goal
    for _ in range(40):
        clean = True
        for k in range(ids.size):
            while t[k] > 0.0 and min_area(incident[k]) < floor[k]:
                t[k] = t[k] / 2.0 if t[k] > 1e-3 else 0.0
                nodes[ids[k], :2] = start[k] + t[k] * (goal[k] - start[k])
                clean = False
        if clean:
            return
    nodes[ids, :2] = start  # interacting moves never settled: keep the staircase


def trim_extremities(mesh: ShellMesh, trim_radius: float) -> ShellMesh:
    """Cut the sharp corner regions and ground the cut boundary.

    Nodes strictly within ``trim_radius`` (xy distance) of a support are
    removed and the boundary nodes created by the cut become the new
    supports, projected to z = 1e-6 m.  When the mesh carries its
    force-density net, the projection is realized by re-solving the vertical
    equilibrium with the cut arcs grounded, so the trimmed shell stays
    funicular; without a net the heights are clamped in place.  With radius 0
    the mesh is returned unchanged and the original supports are kept.
    """
    if trim_radius <= 0.0:
        return mesh.copy()
    anchors = mesh.nodes[mesh.supports][:, :2]
    d2 = ((mesh.nodes[:, None, :2] - anchors[None]) ** 2).sum(axis=2)
    removed = (d2 < trim_radius ** 2).any(axis=1)
    if removed.all():
        raise FormFindError("trim radius removes the entire mesh")

    keep = ~removed
    new_index = -np.ones(mesh.n_nodes, dtype=np.int64)
    new_index[keep] = np.arange(int(keep.sum()))

    tri_keep = keep[mesh.tris].all(axis=1)
    cut_tris = mesh.tris[~tri_keep]
    boundary_old = np.unique(cut_tris[keep[cut_tris]])

    tris = new_index[mesh.tris[tri_keep]]
    nodes = mesh.nodes[keep].copy()
    supports = new_index[boundary_old]
    supports = supports[supports >= 0]
    if supports.size == 0:
        raise FormFindError("trim left no support nodes at the corners")

    # every anchor whose region was cut must be replaced by at least one
    # support adjacent to that cut, found through the severed triangles
    for a in range(anchors.shape[0]):
        hit = (d2[:, a] < trim_radius ** 2)
        if not hit.any():
            continue
        touched = cut_tris[hit[cut_tris].any(axis=1)]
        if new_index[touched[keep[touched]]].size == 0:
            raise FormFindError("a corner region lost all of its supports")

    used = np.unique(tris)
    remap = None
    if used.size < nodes.shape[0]:
        remap = -np.ones(nodes.shape[0], dtype=np.int64)
        remap[used] = np.arange(used.size)
        nodes = nodes[used]
        tris = remap[tris]
        supports = remap[supports]
        supports = supports[supports >= 0]
    supports = np.unique(supports)

    net = None
    if isinstance(mesh.net, Net):
        edges = new_index[mesh.net.edges]
        alive_e = (edges >= 0).all(axis=1)
        edges, q = edges[alive_e], mesh.net.q[alive_e]
        pinned = new_index[mesh.net.xy_pinned]
        pinned = pinned[pinned >= 0]
        if remap is not None:
            edges = remap[edges]
            alive_e = (edges >= 0).all(axis=1)
            edges, q = edges[alive_e], q[alive_e]
            pinned = remap[pinned]
            pinned = pinned[pinned >= 0]
        net = Net(edges, q, pinned, mesh.net.hole)

        # smooth each grounded arc: the cut follows the grid, so the raw
        # support polyline staircases; a few Laplacian passes (ordered by
        # angle around the anchor, endpoints pinned) remove the steps
        # without collapsing nodes the way a hard circle projection can
        rel = nodes[supports, :2][:, None, :] - anchors[None]
        dist = np.sqrt((rel ** 2).sum(axis=2))
        nearest = dist.argmin(axis=1)
        center = nodes[:, :2].mean(axis=0)
        moved_ids = []
        moved_goal = []
        for a in range(anchors.shape[0]):
            arc = supports[nearest == a]
            if arc.size < 3:
                continue
            # measure angles about the anchor-to-center direction so the
            # sort never straddles the atan2 branch cut
            a0 = np.arctan2(center[1] - anchors[a, 1], center[0] - anchors[a, 0])
            ang = np.arctan2(nodes[arc, 1] - anchors[a, 1],
                             nodes[arc, 0] - anchors[a, 0])
            ang = (ang - a0 + np.pi) % (2.0 * np.pi) - np.pi
            arc = arc[np.argsort(ang)]
            p = nodes[arc, :2].copy()
            for _ in range(4):
                p[1:-1] = 0.25 * p[:-2] + 0.5 * p[1:-1] + 0.25 * p[2:]
            moved_ids.append(arc)
            moved_goal.append(p)
        if moved_ids:
            _move_with_fold_guard(nodes, tris, np.concatenate(moved_ids),
                                  np.concatenate(moved_goal))

        # re-solve the trimmed net with the cut arcs grounded so the shell
        # stays funicular; the plan stays as form-found (a further xy
        # re-solve would fold near the concave cut arcs)
        apex = mesh.nodes[:, 2].max()
        _check_connected(nodes.shape[0], edges, supports)
        D = _density_matrix(nodes.shape[0], edges, q)
        z = -_solve_coordinate(D, supports, np.zeros(supports.size),
                               np.full(nodes.shape[0] - supports.size, -1.0))
        nodes[:, 2] = z * (apex / z.max())
    nodes[supports, 2] = 1e-6

    out = ShellMesh(nodes, tris, supports, mesh.elem_size, net)
    if np.any(out.xy_signed_areas() <= 1e-12):
        raise FormFindError("trimmed surface is not one-to-one over xy")
    if net is not None:
        _check_hole_clear(nodes, tris, net.hole)
    return out


def form_find_strip(n_nodes: int = 41, span: float = 10.0,
                    apex_height: float = 1.8, q: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Degenerate 1-D variant: a single chain between two ground supports.

    Returns the x coordinates and the standing (inverted, apex-rescaled)
    heights of the chain nodes.  Uses the same force-density solve as the full
    net, with the two end nodes fixed.
    """
    xs = np.linspace(0.0, span, n_nodes)
    edges = np.stack([np.arange(n_nodes - 1), np.arange(1, n_nodes)],
                     axis=1).astype(np.int64)
    ends = np.asarray([0, n_nodes - 1], dtype=np.int64)
    D = _density_matrix(n_nodes, edges, np.full(n_nodes - 1, float(q)))
    x = _solve_coordinate(D, ends, xs[ends], np.zeros(n_nodes - 2))
    z = -_solve_coordinate(D, ends, np.zeros(2), np.full(n_nodes - 2, -1.0))
    z *= apex_height / z.max()
    return x, z
