"""Per-tile MCS map, a log-distance radio environment and maximum-likelihood localization.

Coordinates: ``x`` runs along columns and ``y`` along rows, both in meters, so
tile ``(row, col)`` has its center at ``(x, y) = (col + 0.5, row + 0.5) * tile_size_m``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mcsloc.errors import ConfigError, DomainError, FormatError, ValidationError
from mcsloc.phy import derive_seed

MCS_CLASSES = tuple(range(8, 17))
_N_CLASSES = len(MCS_CLASSES)
_SURVEY_STREAM = 0x4D4150
_TEST_STREAM = 0x544553


@dataclass(frozen=True)
class LinkAdaptation:
    """Threshold rule: MCS 8 at ``s_min_db``, one index per ``step_db``, clamped to [8, 16]."""

    s_min_db: float = 2.0
    step_db: float = 2.0

    def __post_init__(self):
        if not self.step_db > 0:
            raise ConfigError("step_db must be positive so the thresholds are monotone")

    def sinr_to_mcs(self, sinr_db):
        idx = np.floor((np.asarray(sinr_db, dtype=np.float64) - self.s_min_db) / self.step_db)
        out = np.clip(MCS_CLASSES[0] + idx, MCS_CLASSES[0], MCS_CLASSES[-1]).astype(np.int64)
        return int(out) if out.ndim == 0 else out


def sinr_to_mcs(sinr_db, link: LinkAdaptation = LinkAdaptation()):
    return link.sinr_to_mcs(sinr_db)


@dataclass(frozen=True)
class RadioEnvironment:
    bs_position: tuple[float, float] = (-1.5, -0.5)
    sinr_ref_db: float = 28.0
    path_loss_exponent: float = 2.0
    reference_distance_m: float = 1.0
    shadowing_sigma_db: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))
        if len(self.bs_position) != 2:
            raise ConfigError("bs_position must be an (x, y) pair")
        if not self.path_loss_exponent > 0:
            raise ConfigError("path_loss_exponent must be positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db must be non-negative")
        if not self.reference_distance_m > 0:
            raise ConfigError("reference_distance_m must be positive")

    def distance_grid(self, rows: int, cols: int, tile_size_m: float = 1.0) -> np.ndarray:
        r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        x = (c + 0.5) * tile_size_m
        y = (r + 0.5) * tile_size_m
        return np.hypot(x - self.bs_position[0], y - self.bs_position[1])

    def mean_sinr_grid(self, rows: int, cols: int, tile_size_m: float = 1.0) -> np.ndarray:
        """Shadowing-free SINR at every tile center."""
        d0 = self.reference_distance_m
        d = np.maximum(self.distance_grid(rows, cols, tile_size_m), d0)
        return self.sinr_ref_db - 10.0 * self.path_loss_exponent * np.log10(d / d0)

    def sample_sinr(self, rows: int, cols: int, n: int, stream: int) -> np.ndarray:
        """(rows, cols, n) SINR draws; ``stream`` separates survey and test draws."""
        rng = np.random.default_rng(derive_seed(self.seed, stream))
        mean = self.mean_sinr_grid(rows, cols)
        return mean[:, :, None] + rng.normal(0.0, 1.0, (rows, cols, n)) * self.shadowing_sigma_db


@dataclass(frozen=True)
class Tile:
    row: int
    col: int
    histogram: dict[int, int]
    mean_mcs: float


class McsMap:
    """Immutable rows x cols grid of MCS histograms over classes 8..16."""

    def __init__(self, counts: np.ndarray, tile_size_m: float = 1.0):
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim != 3 or counts.shape[2] != _N_CLASSES:
            raise ValidationError(f"counts must have shape (rows, cols, {_N_CLASSES}), got {counts.shape}")
        if counts.shape[0] < 1 or counts.shape[1] < 1:
            raise ValidationError("map must have at least one tile")
        if (counts < 0).any():
            raise ValidationError("histogram counts must be non-negative")
        counts.setflags(write=False)
        self._counts = counts
        self.tile_size_m = float(tile_size_m)

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    @property
    def rows(self) -> int:
        return self._counts.shape[0]

    @property
    def cols(self) -> int:
        return self._counts.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    def totals(self) -> np.ndarray:
        return self._counts.sum(axis=2)

    def mean_grid(self) -> np.ndarray:
        """Count-weighted mean MCS per tile; NaN for tiles without observations."""
        tot = self.totals()
        weighted = (self._counts * np.array(MCS_CLASSES)).sum(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, weighted / np.maximum(tot, 1), np.nan)

    def tile(self, row: int, col: int) -> Tile:
        check_tile(row, col, self.shape)
        hist = {m: int(c) for m, c in zip(MCS_CLASSES, self._counts[row, col])}
        return Tile(row, col, hist, float(self.mean_grid()[row, col]))

    def tiles(self) -> Iterable[Tile]:
        for r in range(self.rows):
            for c in range(self.cols):
                yield self.tile(r, c)

    def __eq__(self, other):
        return (isinstance(other, McsMap) and self.tile_size_m == other.tile_size_m
                and np.array_equal(self._counts, other._counts))

    def to_dict(self) -> dict:
        means = self.mean_grid()
        tiles = []
        for r in range(self.rows):
            for c in range(self.cols):
                m = means[r, c]
                tiles.append({
                    "row": r, "col": c,
                    "histogram": {str(k): int(v) for k, v in zip(MCS_CLASSES, self._counts[r, c])},
                    "mean_mcs": None if math.isnan(m) else float(m),
                })
        return {"rows": self.rows, "cols": self.cols, "tile_size_m": self.tile_size_m, "tiles": tiles}

    @classmethod
    def from_dict(cls, d: dict) -> "McsMap":
        try:
            rows, cols = int(d["rows"]), int(d["cols"])
            counts = np.zeros((rows, cols, _N_CLASSES), np.int64)
            for t in d["tiles"]:
                for k, v in t["histogram"].items():
                    k = int(k)
                    if k not in MCS_CLASSES:
                        raise FormatError(f"tile ({t['row']}, {t['col']}): MCS {k} is not one of 8..16")
                    counts[int(t["row"]), int(t["col"]), k - MCS_CLASSES[0]] = int(v)
            return cls(counts, float(d.get("tile_size_m", 1.0)))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise FormatError(f"malformed map document ({exc})") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "McsMap":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)


def check_tile(row: int, col: int, shape: tuple[int, int]) -> None:
    if not (0 <= row < shape[0] and 0 <= col < shape[1]):
        raise DomainError(f"tile ({row}, {col}) outside a {shape[0]}x{shape[1]} grid")


def _class_index(mcs) -> np.ndarray:
    a = np.asarray(mcs, dtype=np.int64)
    bad = (a < MCS_CLASSES[0]) | (a > MCS_CLASSES[-1])
    if bad.any():
        raise DomainError(f"MCS {int(a[bad].ravel()[0])} is outside the map classes 8..16")
    return a - MCS_CLASSES[0]


def build_map(rows: int, cols: int, per_tile_observations: Sequence[Sequence[Sequence[int]]],
              tile_size_m: float = 1.0) -> McsMap:
    """Map from nested ``[row][col] -> list of MCS`` observations."""
    if len(per_tile_observations) != rows or any(len(r) != cols for r in per_tile_observations):
        raise ValidationError(f"observations must be a {rows}x{cols} nested list")
    counts = np.zeros((rows, cols, _N_CLASSES), np.int64)
    for r in range(rows):
        for c in range(cols):
            obs = per_tile_observations[r][c]
            if len(obs) == 0:
                raise ValidationError(f"tile ({r}, {c}) has no observations")
            counts[r, c] = np.bincount(_class_index(obs), minlength=_N_CLASSES)
    return McsMap(counts, tile_size_m)


def simulate_environment(env: RadioEnvironment, rows: int = 6, cols: int = 9, obs_per_tile: int = 500,
                         link: LinkAdaptation = LinkAdaptation()) -> McsMap:
    """Survey map: ``obs_per_tile`` shadowed SINR draws per tile center, link-adapted to MCS."""
    if obs_per_tile < 1:
        raise DomainError("obs_per_tile must be >= 1")
    mcs = link.sinr_to_mcs(env.sample_sinr(rows, cols, obs_per_tile, _SURVEY_STREAM))
    idx = mcs - MCS_CLASSES[0]
    counts = np.zeros((rows, cols, _N_CLASSES), np.int64)
    for k in range(_N_CLASSES):
        counts[:, :, k] = (idx == k).sum(axis=2)
    return McsMap(counts)


def draw_trial_conditions(env: RadioEnvironment, rows: int, cols: int, per_tile: int,
                       link: LinkAdaptation = LinkAdaptation()) -> tuple[np.ndarray, np.ndarray]:
    """Fresh ``(sinr_db, mcs)`` draws per tile, independent of the survey stream."""
    sinr = env.sample_sinr(rows, cols, per_tile, _TEST_STREAM)
    return sinr, link.sinr_to_mcs(sinr)


def log_likelihood_table(m: McsMap, alpha: float = 1.0) -> np.ndarray:
    """(n_tiles, 9) table of log p_tile(mcs) in row-major tile order."""
    if alpha < 0:
        raise DomainError("smoothing alpha must be non-negative")
    c = m.counts.reshape(m.n_tiles, _N_CLASSES).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log((c + alpha) / (c.sum(axis=1, keepdims=True) + _N_CLASSES * alpha))


def locate(m: McsMap, obs: Sequence[int], alpha: float = 1.0,
           table: np.ndarray | None = None) -> tuple[int, int, float]:
    """Maximum-likelihood tile for a list of detected MCS values.

    Ties go to the smallest (row, col). ``table`` may carry a precomputed
    ``log_likelihood_table(m, alpha)``.
    """
    if len(obs) == 0:
        raise DomainError("locate needs at least one observation")
    idx = _class_index(obs)
    lp = log_likelihood_table(m, alpha) if table is None else table
    scores = np.zeros(m.n_tiles)
    for k in idx:
        scores += lp[:, k]
    best = int(np.argmax(scores))  # first maximum in row-major order
    r, c = divmod(best, m.cols)
    return r, c, float(scores[best])


def merged_shape(shape: tuple[int, int], factor: int) -> tuple[int, int]:
    if factor < 1:
        raise DomainError("merge factor must be >= 1")
    return -(-shape[0] // factor), -(-shape[1] // factor)


def coarsen_index(row: int, col: int, factor: int, shape: tuple[int, int] = (6, 9)) -> tuple[int, int]:
    mr, mc = merged_shape(shape, factor)
    check_tile(row, col, shape)
    return min(row // factor, mr - 1), min(col // factor, mc - 1)


def merge_tiles(m: McsMap, factor: int = 2) -> McsMap:
    mr, mc = merged_shape(m.shape, factor)
    rmap = np.minimum(np.arange(m.rows) // factor, mr - 1)
    cmap = np.minimum(np.arange(m.cols) // factor, mc - 1)
    counts = np.zeros((mr, mc, _N_CLASSES), np.int64)
    np.add.at(counts, (rmap[:, None], cmap[None, :]), m.counts)
    return McsMap(counts, m.tile_size_m * factor)


@dataclass(frozen=True)
class LocalizationScore:
    exact: float
    within_one: float
    n: int


def score_localization(true_tiles: Sequence[tuple[int, int]], pred_tiles: Sequence[tuple[int, int]]
                       ) -> LocalizationScore:
    """Exact-tile and Chebyshev-distance-1 accuracy."""
    if len(true_tiles) != len(pred_tiles):
        raise ValidationError("true and predicted tile lists differ in length")
    if not true_tiles:
        raise DomainError("no localization trials to score")
    t = np.asarray(true_tiles)
    p = np.asarray(pred_tiles)
    cheb = np.abs(t - p).max(axis=1)
    return LocalizationScore(float((cheb == 0).mean()), float((cheb <= 1).mean()), len(t))


def tile_id(row: int, col: int, cols: int) -> int:
    return row * cols + col


def _ramp(v: float, lo: float, hi: float) -> str:
    # low MCS dark blue, high MCS yellow
    f = 0.0 if hi <= lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
    a, b = (38, 48, 110), (250, 220, 60)
    return "#" + "".join(f"{round(x + (y - x) * f):02x}" for x, y in zip(a, b))


def map_svg(m: McsMap, cell: int = 48) -> str:
    """Heatmap of mean MCS per tile."""
    means = m.mean_grid()
    w, h = m.cols * cell, m.rows * cell
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="{cell // 4}">']
    for r in range(m.rows):
        for c in range(m.cols):
            v = means[r, c]
            fill = "#dddddd" if math.isnan(v) else _ramp(v, MCS_CLASSES[0], MCS_CLASSES[-1])
            label = "-" if math.isnan(v) else f"{v:.1f}"
            x, y = c * cell, r * cell
            parts.append(f'<rect class="tile" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{fill}" stroke="#ffffff"><title>{escape(f"({r}, {c}) {label}")}</title></rect>')
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2}" text-anchor="middle" '
                         f'dominant-baseline="central">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_map_svg(m: McsMap, path: str | Path) -> None:
    Path(path).write_text(map_svg(m), encoding="utf-8")
