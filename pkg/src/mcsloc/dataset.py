"""Recording files, window extraction and the train/validation split.

Payload layout: little-endian binary32, interleaved I,Q, no header. Metadata
lives in a JSON sidecar next to the payload (``<payload>.meta.json``).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from mcsloc.errors import ConfigError, DomainError, FormatError, ValidationError
from mcsloc.phy import derive_seed

META_KEYS = ("mcs", "sinr_db", "file_index", "seed", "sample_rate_hz", "n_samples")
SIDECAR_SUFFIX = ".meta.json"
_PAYLOAD_DTYPE = np.dtype("<c8")


@dataclass(frozen=True)
class RecordingMeta:
    mcs: int
    sinr_db: float
    file_index: int
    seed: int
    sample_rate_hz: float
    n_samples: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in META_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> "RecordingMeta":
        missing = [k for k in META_KEYS if k not in d]
        if missing:
            raise FormatError(f"recording metadata missing keys: {missing}")
        return cls(int(d["mcs"]), float(d["sinr_db"]), int(d["file_index"]), int(d["seed"]),
                   float(d["sample_rate_hz"]), int(d["n_samples"]))

    @property
    def tuple_key(self) -> tuple[int, float]:
        return (self.mcs, self.sinr_db)


@dataclass(frozen=True)
class DatasetSpec:
    mcs_values: tuple[int, ...] = tuple(range(8, 17))
    sinr_grid_db: tuple[float, ...] = tuple(float(s) for s in range(0, 21))
    files_per_tuple: int = 10
    samples_per_file: int = 523776
    window_len: int = 2048
    windows_per_recording: int = 1000
    val_files_per_tuple: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mcs_values", tuple(int(m) for m in self.mcs_values))
        object.__setattr__(self, "sinr_grid_db", tuple(float(s) for s in self.sinr_grid_db))
        if not self.mcs_values or len(set(self.mcs_values)) != len(self.mcs_values):
            raise ConfigError("mcs_values must be a non-empty list of distinct indices")
        if not self.sinr_grid_db:
            raise ConfigError("sinr_grid_db must not be empty")
        if self.window_len > self.samples_per_file:
            raise ConfigError("window_len must not exceed samples_per_file")
        if self.windows_per_recording < 1:
            raise ConfigError("windows_per_recording must be >= 1")
        if not 0 <= self.val_files_per_tuple < self.files_per_tuple:
            raise ConfigError("val_files_per_tuple must be smaller than files_per_tuple")

    @property
    def n_classes(self) -> int:
        return len(self.mcs_values)

    def label_of(self, mcs: int) -> int:
        try:
            return self.mcs_values.index(mcs)
        except ValueError:
            raise DomainError(f"MCS {mcs} is not one of the dataset classes {self.mcs_values}") from None

    def mcs_of(self, label: int) -> int:
        return self.mcs_values[label]


class ExampleWindow(NamedTuple):
    data: np.ndarray  # (2, window_len) float32, row 0 = I, row 1 = Q
    label: int


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def write_recording(buffer: np.ndarray, meta: RecordingMeta, path: str | Path) -> None:
    buffer = np.asarray(buffer)
    if buffer.ndim != 1 or len(buffer) != meta.n_samples:
        raise ValidationError(f"buffer length {buffer.size} does not match meta.n_samples={meta.n_samples}")
    path = Path(path)
    try:
        path.write_bytes(buffer.astype(_PAYLOAD_DTYPE, copy=False).tobytes())
        sidecar_path(path).write_text(json.dumps(meta.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write recording {path}: {exc}") from exc


def read_recording(path: str | Path) -> tuple[np.ndarray, RecordingMeta]:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"{path}: metadata sidecar {side.name} is missing")
    try:
        meta = RecordingMeta.from_dict(json.loads(side.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: invalid JSON ({exc})") from None
    raw = path.read_bytes()
    if len(raw) % _PAYLOAD_DTYPE.itemsize:
        raise FormatError(f"{path}: payload of {len(raw)} bytes is not a whole number of I/Q pairs")
    samples = np.frombuffer(raw, dtype=_PAYLOAD_DTYPE).astype(np.complex64)
    if np.isnan(samples.real).any() or np.isnan(samples.imag).any():
        raise ValidationError(f"{path}: payload contains NaN")
    if len(samples) != meta.n_samples:
        raise FormatError(f"{path}: payload has {len(samples)} samples, metadata says {meta.n_samples}")
    return samples, meta


def normalize_window(w: np.ndarray) -> np.ndarray:
    """Scale a (2, L) window so its RMS over both channels is 1."""
    rms = np.sqrt(np.mean(np.square(w, dtype=np.float64)))
    if rms > 0:
        w = w / rms
    return w.astype(np.float32)


def window_offsets(n: int, spec: DatasetSpec, seed: int) -> np.ndarray:
    if n < spec.window_len:
        raise DomainError(f"recording of {n} samples is shorter than window_len={spec.window_len}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, n - spec.window_len + 1, size=spec.windows_per_recording)


def extract_windows(rec: np.ndarray, meta: RecordingMeta, spec: DatasetSpec,
                    seed: int) -> list[ExampleWindow]:
    label = spec.label_of(meta.mcs)
    offsets = window_offsets(len(rec), spec, seed)
    out = []
    for o in offsets:
        seg = rec[o:o + spec.window_len]
        out.append(ExampleWindow(normalize_window(np.stack([seg.real, seg.imag])), label))
    return out


def window_seed(meta: RecordingMeta) -> int:
    """Per-recording stream for window offsets."""
    return derive_seed(meta.seed, 0x57494E)


def build_splits(metas: Sequence[RecordingMeta], spec: DatasetSpec
                 ) -> tuple[list[RecordingMeta], list[RecordingMeta]]:
    """Last ``val_files_per_tuple`` file indices of each (mcs, sinr) tuple go to validation."""
    groups: dict[tuple[int, float], list[RecordingMeta]] = {}
    for m in metas:
        groups.setdefault(m.tuple_key, []).append(m)
    bad = []
    expected = list(range(spec.files_per_tuple))
    for key, ms in sorted(groups.items()):
        if sorted(m.file_index for m in ms) != expected:
            bad.append(key)
    if bad:
        listing = ", ".join(f"(mcs={m}, sinr={s:g})" for m, s in bad)
        raise ValidationError(
            f"tuples without exactly file indices 0..{spec.files_per_tuple - 1}: {listing}")
    first_val = spec.files_per_tuple - spec.val_files_per_tuple
    train, val = [], []
    for key in sorted(groups):
        for m in sorted(groups[key], key=lambda m: m.file_index):
            (val if m.file_index >= first_val else train).append(m)
    return train, val


def recording_name(meta: RecordingMeta) -> str:
    return f"mcs{meta.mcs:02d}_sinr{meta.sinr_db:+06.1f}_f{meta.file_index}.iq"


@dataclass
class Manifest:
    spec: DatasetSpec
    signal: dict
    recordings: list[tuple[str, RecordingMeta]] = field(default_factory=list)

    def to_dict(self) -> dict:
        spec = asdict(self.spec)
        spec["mcs_values"] = list(spec["mcs_values"])
        spec["sinr_grid_db"] = list(spec["sinr_grid_db"])
        return {
            "spec": spec,
            "signal": self.signal,
            "recordings": [{"file": f, **m.to_dict()} for f, m in self.recordings],
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise FormatError(f"dataset manifest {path} not found")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
            spec = DatasetSpec(**d["spec"])
            recs = [(r["file"], RecordingMeta.from_dict(r)) for r in d["recordings"]]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed manifest ({exc})") from None
        return cls(spec, d.get("signal", {}), recs)


def load_windows(root: str | Path, metas: Sequence[RecordingMeta], spec: DatasetSpec,
                 jobs: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read recordings under ``root`` and stack their windows.

    Returns ``(x, y, sinr)`` with ``x`` of shape (n, 2, window_len). Output order
    follows ``metas`` regardless of ``jobs``.
    """
    root = Path(root)

    def one(meta):
        rec, stored = read_recording(root / recording_name(meta))
        if stored != meta:
            raise FormatError(f"{recording_name(meta)}: sidecar disagrees with manifest")
        ws = extract_windows(rec, meta, spec, window_seed(meta))
        return np.stack([w.data for w in ws]), ws[0].label, meta.sinr_db

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(one, metas))
    else:
        parts = [one(m) for m in metas]
    if not parts:
        return (np.zeros((0, 2, spec.window_len), np.float32), np.zeros(0, np.int64),
                np.zeros(0, np.float64))
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([np.full(len(p[0]), p[1], np.int64) for p in parts])
    s = np.concatenate([np.full(len(p[0]), p[2]) for p in parts])
    return x, y, s
