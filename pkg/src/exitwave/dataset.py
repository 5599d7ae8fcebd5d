"""Dataset generation: parameter sampling, simulation records, splits and augmentation.

Randomness is drawn from counter-based Philox streams keyed by
``(master_seed, record_index)``, so any record can be regenerated on its own
and worker scheduling never changes the output.
"""

from __future__ import annotations

import json
import math
import os
import struct
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .crystal import (
    DEFAULT_PAD_XY_NM,
    DEFAULT_PAD_Z_NM,
    DEFAULT_SLICE_THICKNESS_NM,
    CrystalStructure,
    SpecimenBlock,
    build_block,
    parse_cif,
)
from .errors import (
    BadConfig,
    CropOutOfBounds,
    DataError,
    EmptyBlock,
    UnknownGroupKey,
    WaveFileError,
)
from .grid import DEFAULT_BAND_LIMIT, Grid
from .multislice import ComplexField2D, simulate_exit_wave, simulation_grid
from .reconmath import PhasePair

VOLTAGES_KV = (80.0, 200.0, 300.0)
DEPTH_RANGE_NM = (5.0, 100.0)
WIDTH_RANGE_NM = (5.0, 10.0)
ZONE_INDICES = (0, 1, 2)
TILT_STD_DEG = 0.1
RESTRICT_FACTOR = 0.25
SPLITS = ("train", "unseen", "validation", "test")
MODES = ("unrestricted", "restricted", "single-material")


@dataclass(frozen=True)
class SimParams:
    voltage: float
    depth: float
    width: float
    zone_axis: tuple[int, int, int]
    tilt: tuple[float, float]
    kirkland_n: int
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["zone_axis"] = list(self.zone_axis)
        d["tilt"] = list(self.tilt)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        return cls(
            voltage=float(d["voltage"]),
            depth=float(d["depth"]),
            width=float(d["width"]),
            zone_axis=tuple(int(v) for v in d["zone_axis"]),
            tilt=tuple(float(v) for v in d["tilt"]),
            kirkland_n=int(d["kirkland_n"]),
            seed=int(d["seed"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class DatasetConfig:
    mode: str = "unrestricted"
    kirkland_n: int = 3
    records_per_cif: int = 3
    unseen_per_cif: int = 0
    grid_size: int = 512
    crop_size: int = 320
    slice_thickness_nm: float = DEFAULT_SLICE_THICKNESS_NM
    band_limit: float = DEFAULT_BAND_LIMIT
    pad_xy_nm: float = DEFAULT_PAD_XY_NM
    pad_z_nm: float = DEFAULT_PAD_Z_NM
    normalization: str = "rms"
    depth_range_nm: tuple[float, float] = DEPTH_RANGE_NM
    width_range_nm: tuple[float, float] = WIDTH_RANGE_NM
    restrict_factors: dict = field(default_factory=lambda: {"depth": RESTRICT_FACTOR, "width": RESTRICT_FACTOR})
    max_resample: int = 8
    cifs: list = field(default_factory=list)  # [{"path": ..., "group": ...}]
    splits: dict = field(default_factory=dict)  # group -> split
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kirkland_n not in (1, 3):
            raise BadConfig(f"kirkland_n must be 1 or 3, got {self.kirkland_n}")
        if self.normalization not in ("rms", "mean_modulus"):
            raise BadConfig(f"unknown normalization {self.normalization!r}")
        if self.crop_size > self.grid_size:
            raise BadConfig("crop size exceeds the simulation grid")
        for name in ("depth_range_nm", "width_range_nm"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi:
                raise BadConfig(f"{name} must satisfy 0 < low < high, got {(lo, hi)}")
            setattr(self, name, (float(lo), float(hi)))
        for split in self.splits.values():
            if split not in SPLITS:
                raise BadConfig(f"unknown split {split!r}; expected one of {SPLITS}")
        if self.mode == "single-material" and len(self.cifs) > 1:
            raise BadConfig("single-material mode takes exactly one CIF")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "DatasetConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d, base_dir=str(base_dir))
        except TypeError as exc:
            raise BadConfig(str(exc)) from None

    @classmethod
    def load(cls, path) -> "DatasetConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BadConfig(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def ranges(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Depth and width sampling supports after any mode restriction."""
        depth, width = self.depth_range_nm, self.width_range_nm
        if self.mode == "restricted":
            fd = self.restrict_factors.get("depth", RESTRICT_FACTOR)
            fw = self.restrict_factors.get("width", RESTRICT_FACTOR)
            depth = (depth[0], depth[0] + fd * (depth[1] - depth[0]))
            width = (width[0], width[0] + fw * (width[1] - width[0]))
        return depth, width


def record_rng(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one record."""
    key = ((int(master_seed) & (2**64 - 1)) << 64) | (int(index) & (2**64 - 1))
    return np.random.Generator(np.random.Philox(key=key))


def sample_params(config: DatasetConfig, rng) -> SimParams:
    """Draw one set of simulation parameters.

    ``rng`` is a Generator or an integer seed (stream index 0).
    """
    if not isinstance(rng, np.random.Generator):
        rng = record_rng(rng, 0)
    (d_lo, d_hi), (w_lo, w_hi) = config.ranges()
    voltage = VOLTAGES_KV[int(rng.integers(len(VOLTAGES_KV)))]
    depth = float(rng.uniform(d_lo, d_hi))
    width = float(rng.uniform(w_lo, w_hi))
    while True:
        zone = tuple(int(v) for v in rng.choice(ZONE_INDICES, size=3))
        if any(zone):
            break
    tilt = tuple(float(v) for v in rng.normal(0.0, TILT_STD_DEG, size=2))
    seed = int(rng.integers(0, 2**63 - 1))
    return SimParams(voltage, depth, width, zone, tilt, config.kirkland_n, seed)


# --------------------------------------------------------------------------
# Wavefunction files

WAVE_MAGIC = b"EWF1"
_HEADER = struct.Struct("<4sIId")


def encode_wave(psi: ComplexField2D) -> bytes:
    ny, nx = psi.values.shape
    body = np.empty((ny, nx, 2), dtype="<f4")
    body[..., 0] = psi.values.real
    body[..., 1] = psi.values.imag
    return _HEADER.pack(WAVE_MAGIC, nx, ny, float(psi.grid.pixel_size)) + body.tobytes()


def decode_wave(data: bytes) -> ComplexField2D:
    if len(data) < _HEADER.size:
        raise WaveFileError("truncated wavefunction header")
    magic, nx, ny, pixel = _HEADER.unpack_from(data)
    if magic != WAVE_MAGIC:
        raise WaveFileError(f"bad magic {magic!r}, expected {WAVE_MAGIC!r}")
    expected = _HEADER.size + nx * ny * 8
    if len(data) != expected:
        raise WaveFileError(f"wavefunction payload is {len(data)} bytes, expected {expected}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(ny, nx, 2)
    values = body[..., 0].astype(np.float64) + 1j * body[..., 1].astype(np.float64)
    return ComplexField2D(values, Grid(ny, nx, pixel, strict=False))


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wave(path, psi: ComplexField2D, meta: dict | None = None) -> None:
    """Write ``<path>`` and, if ``meta`` is given, ``<stem>.meta.json`` next to it."""
    path = Path(path)
    atomic_write(path, encode_wave(psi))
    if meta is not None:
        atomic_write(meta_path(path), json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_wave(path) -> ComplexField2D:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise WaveFileError(f"cannot read wavefunction file {path}: {exc.strerror}") from None
    return decode_wave(data)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


# --------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class DatasetRecord:
    wavefunction: ComplexField2D
    params: SimParams
    source_cif: str
    split: str | None = None
    group: str | None = None

    def meta(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "source_cif": self.source_cif,
            "split": self.split,
            "group": self.group,
            "shape": list(self.wavefunction.values.shape),
            "pixel_nm": self.wavefunction.grid.pixel_size,
        }


def center_crop(values: np.ndarray, size: int) -> np.ndarray:
    ny, nx = values.shape
    if size > min(ny, nx):
        raise CropOutOfBounds(f"crop {size} exceeds field {ny}x{nx}")
    y0, x0 = (ny - size) // 2, (nx - size) // 2
    return values[y0 : y0 + size, x0 : x0 + size]


def normalize_wave(values: np.ndarray, method: str = "rms") -> np.ndarray:
    """Divide by the RMS modulus (mean intensity 1) or by the mean modulus."""
    mod = np.abs(values)
    scale = math.sqrt(float(np.mean(mod**2))) if method == "rms" else float(np.mean(mod))
    if scale == 0:
        raise DataError("cannot normalize an all-zero wavefunction")
    return values / scale


def vacuum_block(params: SimParams, config: DatasetConfig) -> SpecimenBlock:
    return SpecimenBlock(
        Z=np.zeros(0, dtype=int),
        positions=np.zeros((0, 3)),
        extent=(params.width, params.width, params.depth),
        pad_xy=config.pad_xy_nm,
        pad_z=config.pad_z_nm,
        zone_axis=params.zone_axis,
        tilt=params.tilt,
    )


def generate_record(
    cif,
    params: SimParams,
    config: DatasetConfig | None = None,
    source: str | None = None,
) -> DatasetRecord:
    """Simulate, centre-crop and normalize one exit wave.

    ``cif`` is a path or an already parsed `CrystalStructure`.
    """
    config = config or DatasetConfig()
    if isinstance(cif, CrystalStructure):
        crystal = cif
        source = source or "structure"
    else:
        path = Path(cif)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read CIF {path}: {exc.strerror}") from None
        crystal = parse_cif(text)
        source = source or path.stem
    if crystal.sites:
        block = build_block(crystal, params, pad_xy=config.pad_xy_nm, pad_z=config.pad_z_nm)
    else:
        block = vacuum_block(params, config)
    grid = simulation_grid(block, config.grid_size)
    psi = simulate_exit_wave(
        block,
        params.voltage,
        grid=grid,
        dz=config.slice_thickness_nm,
        kirkland_n=params.kirkland_n,
        band_limit_fraction=config.band_limit,
    )
    cropped = normalize_wave(center_crop(psi.values, config.crop_size), config.normalization)
    wave = ComplexField2D(cropped, Grid(*cropped.shape, grid.pixel_size, strict=False), config.band_limit)
    return DatasetRecord(wave, params, source)


# --------------------------------------------------------------------------
# Splits


def partition_by_source(records, rule: dict) -> dict:
    """Map record ids to splits by their source group key.

    ``records`` yields ``(record_id, group, unseen)`` triples. Unseen records
    (fresh parameters for training materials) go to the ``unseen`` split.
    """
    assignment = {}
    for record_id, group, unseen in records:
        if group not in rule:
            raise UnknownGroupKey(f"group {group!r} of record {record_id!r} has no split")
        split = rule[group]
        if unseen:
            if split != "train":
                raise BadConfig(f"unseen record {record_id!r} must come from a training group")
            split = "unseen"
        assignment[record_id] = split
    return assignment


def split_counts(assignment: dict) -> dict:
    counts = {s: 0 for s in SPLITS}
    for split in assignment.values():
        counts[split] += 1
    return counts


def audit_splits(assignment: dict, material_of: dict) -> list[str]:
    """Materials that appear in more than one of train(+unseen)/validation/test."""
    seen: dict[str, set] = {}
    for record_id, split in assignment.items():
        bucket = "train" if split in ("train", "unseen") else split
        seen.setdefault(material_of[record_id], set()).add(bucket)
    return sorted(m for m, buckets in seen.items() if len(buckets) > 1)


# --------------------------------------------------------------------------
# Augmentation


def dihedral(arr: np.ndarray, transform_id: int) -> np.ndarray:
    """Element ``transform_id`` of the dihedral group: flip (ids 4-7) then k quarter turns."""
    if not 0 <= transform_id < 8:
        raise ValueError(f"transform id must be in [0, 8), got {transform_id}")
    out = np.flip(arr, axis=1) if transform_id >= 4 else arr
    return np.rot90(out, k=transform_id % 4, axes=(0, 1))


def inverse_dihedral(arr: np.ndarray, transform_id: int) -> np.ndarray:
    out = np.rot90(arr, k=-(transform_id % 4), axes=(0, 1))
    return np.flip(out, axis=1) if transform_id >= 4 else out


@dataclass(frozen=True)
class AugmentedSample:
    amplitude: np.ndarray
    phase_pair: np.ndarray  # (w, w, 2): cos, sin
    transform_id: int
    crop_origin: tuple[int, int]


def augment(record, w: int, transform_id: int, crop_origin: tuple[int, int]) -> AugmentedSample:
    """Crop a w x w window at ``crop_origin`` (row, col), then apply a dihedral transform."""
    values = record.wavefunction.values if isinstance(record, DatasetRecord) else np.asarray(record)
    y0, x0 = crop_origin
    ny, nx = values.shape
    if w < 1 or y0 < 0 or x0 < 0 or y0 + w > ny or x0 + w > nx:
        raise CropOutOfBounds(f"{w}x{w} crop at {crop_origin} exceeds {ny}x{nx}")
    if not 0 <= transform_id < 8:
        raise ValueError(f"transform id must be in [0, 8), got {transform_id}")
    crop = values[y0 : y0 + w, x0 : x0 + w]
    pair = PhasePair.from_wave(crop).stack()
    return AugmentedSample(
        amplitude=np.ascontiguousarray(dihedral(np.abs(crop), transform_id)),
        phase_pair=np.ascontiguousarray(dihedral(pair, transform_id)),
        transform_id=transform_id,
        crop_origin=(y0, x0),
    )


def random_augment(record, w: int, rng: np.random.Generator) -> AugmentedSample:
    ny, nx = record.wavefunction.values.shape if isinstance(record, DatasetRecord) else np.shape(record)
    origin = (int(rng.integers(0, ny - w + 1)), int(rng.integers(0, nx - w + 1)))
    return augment(record, w, int(rng.integers(8)), origin)


# --------------------------------------------------------------------------
# Batch generation


@dataclass(frozen=True)
class _Task:
    index: int
    record_id: str
    cif_path: Path
    source: str
    group: str
    split: str


def plan_tasks(config: DatasetConfig) -> list[_Task]:
    if not config.cifs:
        raise BadConfig("config lists no CIFs")
    entries = []
    for entry in config.cifs:
        if isinstance(entry, str):
            entry = {"path": entry}
        path = Path(config.base_dir) / entry["path"]
        group = entry.get("group", "default")
        entries.append((path, group))
    per_cif = config.records_per_cif + config.unseen_per_cif
    tasks, triples = [], []
    for c, (path, group) in enumerate(entries):
        for r in range(per_cif):
            unseen = r >= config.records_per_cif
            record_id = f"{c:05d}_{path.stem}_{r:02d}" + ("u" if unseen else "")
            triples.append((record_id, group, unseen))
            tasks.append((c * per_cif + r, record_id, path, path.stem, group))
    rule = config.splits or {g: "train" for _, g in entries}
    assignment = partition_by_source(triples, rule)
    return [_Task(i, rid, p, s, g, assignment[rid]) for i, rid, p, s, g in tasks]


def _run_task(task: _Task, config: DatasetConfig, master_seed: int, out: Path) -> dict:
    wave_file = out / task.split / f"{task.record_id}.ewf"
    if wave_file.exists() and meta_path(wave_file).exists():
        meta = json.loads(meta_path(wave_file).read_text())
        return {"id": task.record_id, "status": "ok", "meta": meta}
    rng = record_rng(master_seed, task.index)
    try:
        crystal = parse_cif(task.cif_path.read_text(encoding="utf-8"))
    except OSError as exc:
        return {"id": task.record_id, "status": "skipped", "reason": f"unreadable CIF: {exc.strerror}"}
    except DataError as exc:
        return {"id": task.record_id, "status": "skipped", "reason": f"unsupported CIF: {exc}"}
    attempts = 0
    while True:
        params = sample_params(config, rng)
        try:
            record = generate_record(crystal, params, config, source=task.source)
            break
        except EmptyBlock as exc:
            attempts += 1
            if attempts > config.max_resample:
                return {"id": task.record_id, "status": "skipped", "reason": f"no feasible parameters: {exc}"}
        except DataError as exc:
            return {"id": task.record_id, "status": "skipped", "reason": f"simulation failed: {exc}"}
    meta = record.meta()
    meta.update(split=task.split, group=task.group, record_id=task.record_id, resampled=attempts)
    write_wave(wave_file, record.wavefunction, meta)
    return {"id": task.record_id, "status": "ok", "meta": meta}


def generate_dataset(config: DatasetConfig, out, master_seed: int = 0, threads: int = 1, progress=True) -> dict:
    """Generate (or resume) a dataset tree under ``out`` and return its manifest.

    Finished records are detected by their wavefunction and sidecar files and
    are not recomputed, so an interrupted run can simply be restarted.
    """
    out = Path(out)
    tasks = plan_tasks(config)
    results = {}

    def run(task):
        return task, _run_task(task, config, master_seed, out)

    with ThreadPoolExecutor(max_workers=max(int(threads), 1)) as pool:
        for done, (task, result) in enumerate(pool.map(run, tasks), start=1):
            results[task.record_id] = (task, result)
            if progress:
                print(f"[{done}/{len(tasks)}] {task.record_id}: {result['status']}", file=sys.stderr)

    assignment = {rid: t.split for rid, (t, r) in results.items() if r["status"] == "ok"}
    material = {rid: str(t.cif_path) for rid, (t, r) in results.items()}
    leaks = audit_splits(assignment, material)
    manifest = {
        "master_seed": int(master_seed),
        "config": {k: v for k, v in asdict(config).items() if k != "base_dir"},
        "counts": split_counts(assignment),
        "records": {
            rid: {"split": t.split, "group": t.group, "source": t.source}
            for rid, (t, r) in sorted(results.items())
            if r["status"] == "ok"
        },
        "skipped": {rid: r["reason"] for rid, (t, r) in sorted(results.items()) if r["status"] != "ok"},
        "leakage": leaks,
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
