"""Level-set grid representation of shells and the shared energy computations.

A shell is stored as a cell-centered heightfield z(x, y) with a binary validity
mask over a rectangular footprint.  Solution fields live in a fixed 13-channel
stack.  Masked normalization, slope-corrected area weights, and the
membrane/flexural/external work decomposition defined here are shared by the
finite-element oracle, the surrogate's physics loss, and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .mesh import MeshError, canonicalize_winding

if TYPE_CHECKING:  # pragma: no cover
    from .mesh import ShellMesh

# Channel order of the solution stack. Strain and moment entries are tensor
# components (the 12-shear is epsilon_12, not the engineering gamma_12).
CHANNEL_NAMES: tuple[str, ...] = (
    "u_z",
    "eps11_m", "eps22_m", "eps12_m",
    "f11", "f22", "f12",
    "eps11_f", "eps22_f", "eps12_f",
    "m11", "m22", "m12",
)
N_CHANNELS = len(CHANNEL_NAMES)

# Stats channel list for normalization: the height plane plus the field stack.
STAT_CHANNEL_NAMES: tuple[str, ...] = ("z",) + CHANNEL_NAMES


class DegenerateChannelError(ValueError):
    """A channel is constant over the valid pixels, so the scheme cannot scale it."""


class MetricUndefinedError(ValueError):
    """A metric denominator is identically zero."""


@dataclass(frozen=True)
class GridSpec:
    """Cell-centered rectangular grid over the shell footprint.

    Parameters
    ----------
    nx, ny : int
        Pixel counts along x and y.
    span_x, span_y : float
        Footprint extents in meters.
    """

    nx: int = 64
    ny: int = 64
    span_x: float = 10.0
    span_y: float = 10.0

    def __post_init__(self) -> None:
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if self.span_x <= 0.0 or self.span_y <= 0.0:
            raise ValueError("footprint spans must be positive")

    @property
    def spacing_x(self) -> float:
        return self.span_x / self.nx

    @property
    def spacing_y(self) -> float:
        return self.span_y / self.ny

    @property
    def cell_area(self) -> float:
        return self.spacing_x * self.spacing_y

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the 1-D x and y coordinates of cell centers (strictly interior)."""
        xs = (np.arange(self.nx) + 0.5) * self.spacing_x
        ys = (np.arange(self.ny) + 0.5) * self.spacing_y
        return xs, ys

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny,
                "span_x": self.span_x, "span_y": self.span_y}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(nx=int(d["nx"]), ny=int(d["ny"]),
                   span_x=float(d["span_x"]), span_y=float(d["span_y"]))


@dataclass
class HeightField:
    """Shell heights on a grid with a validity mask.

    Arrays are indexed ``[ix, iy]``; ``mask`` is 1 where the cell center lies
    under the shell surface and 0 elsewhere.  Valid cells carry z > 0 and
    invalid cells carry exactly 0.
    """

    z: np.ndarray
    mask: np.ndarray
    spec: GridSpec

    def validate(self) -> None:
        if self.z.shape != (self.spec.nx, self.spec.ny):
            raise ValueError(f"z shape {self.z.shape} does not match grid "
                             f"({self.spec.nx}, {self.spec.ny})")
        if self.mask.shape != self.z.shape:
            raise ValueError("mask shape does not match z")
        if not np.all(np.isfinite(self.z)):
            raise ValueError("z contains non-finite values")
        m = self.mask.astype(bool)
        if np.any(self.z[~m] != 0.0):
            raise ValueError("masked cells must have z = 0")
        if np.any(self.z[m] <= 0.0):
            raise ValueError("valid cells must have z > 0")

    def copy(self) -> "HeightField":
        return HeightField(self.z.copy(), self.mask.copy(), self.spec)


@dataclass
class FieldStack:
    """The 13 solution channels on the grid, zero outside the mask.

    Channel order is fixed: vertical deflection, membrane strain tensor,
    membrane stress resultants, curvature tensor, bending moments.
    """

    channels: np.ndarray
    mask: np.ndarray
    spec: GridSpec

    def validate(self) -> None:
        expected = (N_CHANNELS, self.spec.nx, self.spec.ny)
        if self.channels.shape != expected:
            raise ValueError(f"channels shape {self.channels.shape}, expected {expected}")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("channels contain non-finite values")
        invalid = ~self.mask.astype(bool)
        if np.any(self.channels[:, invalid] != 0.0):
            raise ValueError("masked cells must be zero in every channel")

    def channel(self, name: str) -> np.ndarray:
        return self.channels[CHANNEL_NAMES.index(name)]

    def copy(self) -> "FieldStack":
        return FieldStack(self.channels.copy(), self.mask.copy(), self.spec)


@dataclass
class NormStats:
    """Per-channel normalization statistics computed over valid pixels only.

    Parameters
    ----------
    scheme : str
        Either ``"minmax"`` (affine map of the valid range onto [-1, 1]) or
        ``"zscore"`` (zero mean, unit variance over valid training pixels).
    channels : tuple of str
        Channel names, one entry per stats row.
    x_min, x_max, x_mean, x_std : ndarray
        Per-channel statistics, all stored regardless of scheme.
    """

    scheme: str
    channels: tuple[str, ...]
    x_min: np.ndarray
    x_max: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray

    SCHEMES = ("minmax", "zscore")

    def __post_init__(self) -> None:
        if self.scheme not in self.SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {self.SCHEMES}")

    def index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise KeyError(f"no stats for channel {name!r}") from None

    def check_channel(self, name: str) -> None:
        """Reject channels the scheme cannot scale (constant over valid pixels)."""
        i = self.index(name)
        if self.scheme == "minmax" and self.x_max[i] <= self.x_min[i]:
            raise DegenerateChannelError(
                f"channel {name!r} is constant (min == max), minmax undefined")
        if self.scheme == "zscore" and self.x_std[i] <= 0.0:
            raise DegenerateChannelError(
                f"channel {name!r} has zero variance, zscore undefined")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "channels": list(self.channels),
            "x_min": self.x_min.tolist(),
            "x_max": self.x_max.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            scheme=str(d["scheme"]),
            channels=tuple(d["channels"]),
            x_min=np.asarray(d["x_min"], dtype=np.float64),
            x_max=np.asarray(d["x_max"], dtype=np.float64),
            x_mean=np.asarray(d["x_mean"], dtype=np.float64),
            x_std=np.asarray(d["x_std"], dtype=np.float64),
        )

    def fingerprint(self) -> str:
        """Stable content hash used to detect checkpoint/dataset mismatches."""
        import hashlib
        import json
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class WorkDecomposition:
    """Membrane, flexural, and external work with the membrane-factor field.

    ``mf_field`` is the pixel-wise ratio of membrane work density to total
    internal work density, clamped to [0, 1]; pixels where both densities
    vanish are excluded via ``mf_defined``.  ``mf_mean`` is the area-weighted
    mean over defined pixels (NaN when none are defined).  ``delta_p`` is the
    equilibrium residual W_memb + W_flex - W_ext.
    """

    w_memb: float
    w_flex: float
    w_ext: float
    delta_p: float
    mf_field: np.ndarray
    mf_defined: np.ndarray
    mf_mean: float

    def validate(self) -> None:
        d = self.mf_defined.astype(bool)
        if np.any(self.mf_field[d] < 0.0) or np.any(self.mf_field[d] > 1.0):
            raise ValueError("mf_field out of [0, 1] on defined pixels")
        if d.any():
            if not (0.0 <= self.mf_mean <= 1.0):
                raise ValueError("mf_mean out of [0, 1]")
        elif not np.isnan(self.mf_mean):
            raise ValueError("mf_mean must be NaN when no pixel is defined")


def compute_norm_stats(
    samples: list[tuple[HeightField, FieldStack]],
    scheme: str,
) -> NormStats:
    """Fit per-channel statistics over the valid pixels of the given samples.

    Masked pixels never contribute.  Channels that are constant over the valid
    pixels raise :class:`DegenerateChannelError` when the scheme cannot scale
    them.
    """
    if not samples:
        raise ValueError("cannot compute stats from an empty sample list")
    n_stat = len(STAT_CHANNEL_NAMES)
    sums = np.zeros(n_stat)
    sqsums = np.zeros(n_stat)
    counts = np.zeros(n_stat, dtype=np.int64)
    mins = np.full(n_stat, np.inf)
    maxs = np.full(n_stat, -np.inf)
    for hf, fs in samples:
        m = hf.mask.astype(bool)
        if not m.any():
            continue
        planes = np.concatenate([hf.z[None], fs.channels], axis=0)
        vals = planes[:, m]
        sums += vals.sum(axis=1)
        sqsums += (vals ** 2).sum(axis=1)
        counts += m.sum()
        mins = np.minimum(mins, vals.min(axis=1))
        maxs = np.maximum(maxs, vals.max(axis=1))
    if counts[0] == 0:
        raise ValueError("no valid pixels in any sample")
    mean = sums / counts
    var = np.maximum(sqsums / counts - mean ** 2, 0.0)
    std = np.sqrt(var)
    stats = NormStats(
        scheme=scheme,
        channels=STAT_CHANNEL_NAMES,
        x_min=mins,
        x_max=maxs,
        x_mean=mean,
        x_std=std,
    )
    for name in STAT_CHANNEL_NAMES:
        stats.check_channel(name)
    return stats


def _normalize_plane(vals: np.ndarray, stats: NormStats, name: str) -> np.ndarray:
    i = stats.index(name)
    stats.check_channel(name)
    if stats.scheme == "minmax":
        return 2.0 * (vals - stats.x_min[i]) / (stats.x_max[i] - stats.x_min[i]) - 1.0
    return (vals - stats.x_mean[i]) / stats.x_std[i]


def _denormalize_plane(vals: np.ndarray, stats: NormStats, name: str) -> np.ndarray:
    i = stats.index(name)
    stats.check_channel(name)
    if stats.scheme == "minmax":
        return (vals + 1.0) * 0.5 * (stats.x_max[i] - stats.x_min[i]) + stats.x_min[i]
    return vals * stats.x_std[i] + stats.x_mean[i]


def normalize(data, stats: NormStats):
    """Map valid pixels through the per-channel scheme; masked pixels stay 0.

    Accepts a :class:`HeightField` (the ``"z"`` stats row) or a
    :class:`FieldStack` (the 13 field rows).  Returns the same container type;
    the heightfield positivity invariant is intentionally not enforced on
    normalized data.
    """
    if isinstance(data, HeightField):
        m = data.mask.astype(bool)
        z = np.zeros_like(data.z)
        z[m] = _normalize_plane(data.z[m], stats, "z")
        return HeightField(z, data.mask.copy(), data.spec)
    if isinstance(data, FieldStack):
        m = data.mask.astype(bool)
        out = np.zeros_like(data.channels)
        for c, name in enumerate(CHANNEL_NAMES):
            out[c][m] = _normalize_plane(data.channels[c][m], stats, name)
        return FieldStack(out, data.mask.copy(), data.spec)
    raise TypeError(f"cannot normalize {type(data).__name__}")


def denormalize(data, stats: NormStats):
    """Inverse of :func:`normalize` on valid pixels; masked pixels stay 0."""
    if isinstance(data, HeightField):
        m = data.mask.astype(bool)
        z = np.zeros_like(data.z)
        z[m] = _denormalize_plane(data.z[m], stats, "z")
        return HeightField(z, data.mask.copy(), data.spec)
    if isinstance(data, FieldStack):
        m = data.mask.astype(bool)
        out = np.zeros_like(data.channels)
        for c, name in enumerate(CHANNEL_NAMES):
            out[c][m] = _denormalize_plane(data.channels[c][m], stats, name)
        return FieldStack(out, data.mask.copy(), data.spec)
    raise TypeError(f"cannot denormalize {type(data).__name__}")


def rasterize(mesh: "ShellMesh", node_fields: np.ndarray | None,
              spec: GridSpec) -> tuple[HeightField, FieldStack | None]:
    """Project a shell mesh (and optional nodal channels) onto the grid.

    Each valid cell center receives barycentric-interpolated values from the
    containing triangle; uncovered centers get mask 0 and value 0.
    ``node_fields`` is a (13, nn) array of per-node channel values or None for
    geometry-only rasterization.  Raises :class:`~shellstudio.mesh.MeshError`
    for empty or folded (non-height-map) meshes.
    """
    if mesh.n_tris == 0 or mesh.n_nodes == 0:
        raise MeshError("cannot rasterize an empty mesh")
    tris = canonicalize_winding(mesh.nodes, mesh.tris)
    xs, ys = spec.cell_centers()
    if node_fields is None:
        values = mesh.nodes[:, 2:3]
    else:
        if node_fields.shape != (N_CHANNELS, mesh.n_nodes):
            raise ValueError(f"node_fields shape {node_fields.shape}, expected "
                             f"({N_CHANNELS}, {mesh.n_nodes})")
        values = np.concatenate([mesh.nodes[:, 2:3], node_fields.T], axis=1)
    out, cover = kernels.rasterize_tri_mesh(mesh.nodes[:, :2], tris, values, xs, ys)
    mask = cover & (out[0] > 0.0)
    z = np.where(mask, out[0], 0.0)
    hf = HeightField(z=z, mask=mask.astype(np.uint8), spec=spec)
    if node_fields is None:
        return hf, None
    channels = out[1:]
    channels[:, ~mask] = 0.0
    return hf, FieldStack(channels=channels, mask=hf.mask.copy(), spec=spec)


def _masked_gradient(z: np.ndarray, mask: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """Finite-difference slope along one axis, aware of the validity mask.

    Central differences where both neighbors are valid, one-sided at mask
    boundaries, zero where no valid neighbor exists.
    """
    m = mask.astype(bool)
    zp = np.roll(z, -1, axis=axis)
    zm = np.roll(z, 1, axis=axis)
    mp = np.roll(m, -1, axis=axis)
    mm = np.roll(m, 1, axis=axis)
    # roll wraps around; edge cells must not see the opposite border
    edge_hi = [slice(None)] * z.ndim
    edge_hi[axis] = slice(-1, None)
    edge_lo = [slice(None)] * z.ndim
    edge_lo[axis] = slice(0, 1)
    mp[tuple(edge_hi)] = False
    mm[tuple(edge_lo)] = False

    grad = np.zeros_like(z)
    central = m & mp & mm
    fwd = m & mp & ~mm
    bwd = m & ~mp & mm
    grad[central] = (zp[central] - zm[central]) / (2.0 * spacing)
    grad[fwd] = (zp[fwd] - z[fwd]) / spacing
    grad[bwd] = (z[bwd] - zm[bwd]) / spacing
    return grad


def area_weights(hf: HeightField) -> np.ndarray:
    """Slope-corrected surface area of each valid cell, in square meters.

    ds = cell_area * sqrt(1 + |grad z|^2) with mask-aware finite differences;
    masked cells get ds = 0.
    """
    spec = hf.spec
    gx = _masked_gradient(hf.z, hf.mask, spec.spacing_x, axis=0)
    gy = _masked_gradient(hf.z, hf.mask, spec.spacing_y, axis=1)
    ds = spec.cell_area * np.sqrt(1.0 + gx ** 2 + gy ** 2)
    ds[~hf.mask.astype(bool)] = 0.0
    return ds


def work_decomposition(fields: FieldStack, hf: HeightField, f_z: float) -> WorkDecomposition:
    """Membrane/flexural/external work totals and the membrane-factor field.

    Expects physical units.  Work sums use the engineering shear 2*eps12 so
    the 12-components pair correctly with their tensor-stored counterparts.
    The membrane factor at a pixel is the clamped ratio of membrane to total
    internal work density; pixels with zero total internal density are
    excluded from the area-weighted mean.
    """
    ds = area_weights(hf)
    c = fields.channels
    memb = c[4] * c[1] + c[5] * c[2] + c[6] * (2.0 * c[3])
    flex = c[10] * c[7] + c[11] * c[8] + c[12] * (2.0 * c[9])
    w_memb = float(np.sum(memb * ds))
    w_flex = float(np.sum(flex * ds))
    w_ext = float(np.sum(f_z * c[0] * ds))
    delta_p = w_memb + w_flex - w_ext

    # interpolation can produce slightly negative densities; clamp before the ratio
    memb_pos = np.maximum(memb, 0.0)
    flex_pos = np.maximum(flex, 0.0)
    total = memb_pos + flex_pos
    defined = (total > 0.0) & hf.mask.astype(bool)
    mf = np.zeros_like(memb)
    mf[defined] = np.clip(memb_pos[defined] / total[defined], 0.0, 1.0)
    w = ds[defined]
    if defined.any() and w.sum() > 0.0:
        mf_mean = float(np.sum(mf[defined] * w) / np.sum(w))
    else:
        mf_mean = float("nan")
    return WorkDecomposition(
        w_memb=w_memb, w_flex=w_flex, w_ext=w_ext, delta_p=delta_p,
        mf_field=mf, mf_defined=defined, mf_mean=mf_mean,
    )
