"""Dataset container: binary sample records, manifest, and the generator.

A dataset is a directory holding ``manifest.json`` plus one binary record per
sample.  Records start with the magic bytes ``SHL1`` followed by 18 planes of
little-endian float32, row-major: height z, uniform load f_z, validity mask,
the 13 solution channels, the membrane-factor field, and the slope-corrected
cell areas.  The manifest stores the schema version, the 80/10/10 split
indices, normalization statistics fitted on the training split, the material
constants, and the grid spec, so a dataset is self-describing.

Generation is a pure function of (count, seed, config): each sample is driven
by an independent child seed, so records are byte-identical across runs and
independent of completion order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formfind
from .fea import Material, SolveError, assemble_and_solve, f_z_constant
from .grid import (
    CHANNEL_NAMES,
    FieldStack,
    GridSpec,
    HeightField,
    NormStats,
    area_weights,
    compute_norm_stats,
    rasterize,
    work_decomposition,
)
from .mesh import MeshError, subdivide

log = logging.getLogger(__name__)

MAGIC = b"SHL1"
SCHEMA_VERSION = 1

# Analysis meshes are the form-found mesh refined once: the 0.25 m form grid
# becomes 0.125 m elements, which drives the FE energy identity to ~1e-13
# while one sample stays in the seconds range.
ANALYSIS_LEVELS = 1

# Record plane order; fixed by the container format.
PLANE_NAMES: tuple[str, ...] = ("z", "f_z", "mask") + CHANNEL_NAMES + ("m_f", "ds")
N_PLANES = len(PLANE_NAMES)

SPLIT_FRACTIONS = {"train": 0.8, "val": 0.1}  # remainder is the test split


class DatasetError(RuntimeError):
    """The dataset directory is unreadable or violates the container contract."""


@dataclass
class SampleRecord:
    """One dataset sample: all 18 grid planes in physical units.

    ``channels`` follows the fixed 13-channel solution order; ``f_z`` is a
    constant-valued plane over valid pixels (uniform self-weight).
    """

    z: np.ndarray
    f_z: np.ndarray
    mask: np.ndarray
    channels: np.ndarray
    m_f: np.ndarray
    ds: np.ndarray
    spec: GridSpec

    def planes(self) -> np.ndarray:
        """All planes stacked in record order, shape (18, nx, ny)."""
        return np.concatenate([self.z[None], self.f_z[None],
                               self.mask[None].astype(np.float64),
                               self.channels, self.m_f[None], self.ds[None]])

    def heightfield(self) -> HeightField:
        return HeightField(self.z.copy(), self.mask.astype(np.uint8).copy(), self.spec)

    def fieldstack(self) -> FieldStack:
        return FieldStack(self.channels.copy(),
                          self.mask.astype(np.uint8).copy(), self.spec)

    def f_z_value(self) -> float:
        """The uniform load magnitude (f_z plane value over valid pixels)."""
        m = self.mask.astype(bool)
        return float(self.f_z[m][0]) if m.any() else 0.0


def write_record(path: str | Path, rec: SampleRecord) -> None:
    """Serialize one sample to the SHL1 binary format."""
    planes = rec.planes().astype("<f4")
    if planes.shape != (N_PLANES, rec.spec.nx, rec.spec.ny):
        raise DatasetError(f"record has {planes.shape[0]} planes, expected {N_PLANES}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.ascontiguousarray(planes).tobytes())


def read_record(path: str | Path, spec: GridSpec) -> SampleRecord:
    """Read one SHL1 record; raises :class:`DatasetError` on format violations."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DatasetError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    expected = 4 + N_PLANES * spec.nx * spec.ny * 4
    if len(raw) != expected:
        raise DatasetError(f"{path}: size {len(raw)}, expected {expected}")
    planes = np.frombuffer(raw, dtype="<f4", offset=4).astype(np.float64)
    planes = planes.reshape(N_PLANES, spec.nx, spec.ny)
    return SampleRecord(
        z=planes[0], f_z=planes[1], mask=planes[2].astype(np.uint8),
        channels=planes[3:16], m_f=planes[16], ds=planes[17], spec=spec,
    )


def split_indices(count: int) -> dict[str, list[int]]:
    """Sequential 80/10/10 split of sample indices (train gets the floor)."""
    n_train = int(count * SPLIT_FRACTIONS["train"])
    n_val = max(int(count * SPLIT_FRACTIONS["val"]), 1 if count >= 3 else 0)
    n_train = min(n_train, count)
    n_val = min(n_val, count - n_train)
    return {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, count)),
    }


class ShellDataset:
    """A generated dataset opened from its directory.

    Records are read lazily; the manifest (splits, normalization statistics,
    material, grid) is loaded eagerly and validated.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise DatasetError(f"{self.root} has no manifest.json")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(
                f"unsupported schema version {manifest.get('schema_version')}")
        self.manifest = manifest
        self.spec = GridSpec.from_dict(manifest["grid"])
        self.material = Material.from_dict(manifest["material"])
        self.stats = NormStats.from_dict(manifest["norm_stats"])
        self.splits: dict[str, list[int]] = {
            k: list(map(int, v)) for k, v in manifest["splits"].items()}
        self.record_names: list[str] = list(manifest["records"])

    def __len__(self) -> int:
        return len(self.record_names)

    def load(self, i: int) -> SampleRecord:
        return read_record(self.root / self.record_names[i], self.spec)

    def split(self, name: str) -> list[int]:
        if name not in self.splits:
            raise KeyError(f"unknown split {name!r}")
        return self.splits[name]

    def f_z(self) -> float:
        return float(self.manifest["f_z"])


def generate_sample(seed: int, hole_prob: float = 0.5,
                    material: Material | None = None,
                    spec: GridSpec | None = None) -> SampleRecord:
    """Produce one sample record from a single integer seed.

    Draws form parameters, form-finds, trims, solves the refined mesh under
    self-weight, rasterizes, and assembles the 18 record planes.  Raises
    :class:`~shellstudio.formfind.FormFindError`, :class:`MeshError`, or
    :class:`SolveError` when the sample is unusable.
    """
    material = material or Material()
    spec = spec or GridSpec()
    rng = np.random.default_rng(seed)
    net_spec, params = formfind.sample_form(rng, hole_prob=hole_prob)
    mesh = formfind.trim_extremities(formfind.form_find(net_spec, params),
                                     params.trim_radius)
    analysis = subdivide(mesh, ANALYSIS_LEVELS)
    result = assemble_and_solve(analysis, material)

    fe_identity = abs(result.work.delta_p) / max(abs(result.work.w_ext), 1e-300)
    if fe_identity > 1e-6:
        raise SolveError(f"FE energy identity {fe_identity:.2e} exceeds 1e-6")

    hf, stack = rasterize(analysis, result.node_fields, spec)
    fz = f_z_constant(material)
    wd = work_decomposition(stack, hf, fz)
    if not np.isfinite(wd.mf_mean) or not (0.0 <= wd.mf_mean <= 1.0):
        raise SolveError(f"membrane factor mean {wd.mf_mean} out of [0, 1]")

    mask = hf.mask.astype(bool)
    return SampleRecord(
        z=hf.z.copy(),
        f_z=np.where(mask, fz, 0.0),
        mask=hf.mask.copy(),
        channels=stack.channels.copy(),
        m_f=wd.mf_field.copy(),
        ds=area_weights(hf),
        spec=spec,
    )


def _child_seed(seed: int, index: int) -> int:
    """Per-sample seed: independent of completion order and other samples."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (1 << 63))


def generate_dataset(count: int, seed: int, out_path: str | Path,
                     hole_prob: float = 0.5, scheme: str = "zscore",
                     material: Material | None = None) -> ShellDataset:
    """Generate ``count`` samples into ``out_path`` and write the manifest.

    Individual sample failures are logged and skipped (the failed attempt's
    child seed is retired and the next one drawn); the run aborts once more
    than 5% of attempts have failed.  Two runs with equal arguments produce
    byte-identical directories.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    material = material or Material()
    spec = GridSpec()
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)

    max_failures = max(1, int(np.ceil(0.05 * count)))
    records: list[str] = []
    samples: list[SampleRecord] = []
    failures: list[dict] = []
    attempt = 0
    while len(samples) < count:
        child = _child_seed(seed, attempt)
        attempt += 1
        try:
            rec = generate_sample(child, hole_prob=hole_prob,
                                  material=material, spec=spec)
        except (formfind.FormFindError, MeshError, SolveError) as exc:
            failures.append({"attempt": attempt - 1, "seed": child,
                             "error": str(exc)})
            log.warning("sample attempt %d (seed %d) failed: %s",
                        attempt - 1, child, exc)
            if len(failures) > max_failures:
                raise DatasetError(
                    f"{len(failures)} of {attempt} attempts failed "
                    f"(limit {max_failures}); generation aborted") from exc
            continue
        name = f"sample_{len(samples):05d}.shl1"
        write_record(out / name, rec)
        records.append(name)
        samples.append(rec)

    splits = split_indices(count)
    train = [(samples[i].heightfield(), samples[i].fieldstack())
             for i in splits["train"]]
    stats = compute_norm_stats(train, scheme)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "count": count,
        "seed": seed,
        "hole_prob": hole_prob,
        "f_z": f_z_constant(material),
        "material": material.to_dict(),
        "grid": spec.to_dict(),
        "splits": splits,
        "norm_stats": stats.to_dict(),
        "records": records,
        "failures": failures,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ShellDataset(out)
