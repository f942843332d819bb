"""MCS table and synthetic uplink baseband generation.

The generator produces a DFT-spread OFDM (SC-FDMA style) waveform on an
LTE-like 15 kHz grid at 1.92 MHz, then resamples it to the capture rate.
Random payload bits are mapped onto the constellation of the requested MCS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import signal as sps

from mcsloc.errors import ConfigError, DomainError, FormatError, ValidationError

MCS_MIN, MCS_MAX = 0, 31
SUBCARRIERS_PER_RB = 12
# normal CP uplink subframe: 14 SC-FDMA symbols, 2 carry DMRS
DATA_SYMBOLS_PER_SUBFRAME = 12


@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation_order: int
    code_rate: float

    @property
    def spectral_efficiency(self) -> float:
        return self.modulation_order * self.code_rate


class McsTable:
    """Index -> McsEntry mapping loaded from ``index,modulation_order,code_rate`` lines."""

    def __init__(self, entries: Iterable[McsEntry]):
        self._entries = {}
        for e in entries:
            if not MCS_MIN <= e.index <= MCS_MAX:
                raise ValidationError(f"MCS index {e.index} outside [0, 31]")
            if e.modulation_order not in (2, 4, 6):
                raise ValidationError(
                    f"MCS {e.index}: modulation order {e.modulation_order} not in {{2, 4, 6}}")
            if not 0.0 < e.code_rate < 1.0:
                raise ValidationError(f"MCS {e.index}: code rate {e.code_rate} not in (0, 1)")
            if e.index in self._entries:
                raise ValidationError(f"duplicate MCS index {e.index}")
            self._entries[e.index] = e
        by_order: dict[int, list[McsEntry]] = {}
        for e in sorted(self._entries.values(), key=lambda e: e.index):
            by_order.setdefault(e.modulation_order, []).append(e)
        for order, es in by_order.items():
            for a, b in zip(es, es[1:]):
                if not b.code_rate > a.code_rate:
                    raise ValidationError(
                        f"code rate must increase with index within modulation order {order}: "
                        f"MCS {a.index} ({a.code_rate}) vs MCS {b.index} ({b.code_rate})")

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "McsTable":
        entries = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise FormatError(f"{source}:{lineno}: expected 'index,modulation_order,code_rate'")
            try:
                entries.append(McsEntry(int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise FormatError(f"{source}:{lineno}: {exc}") from None
        return cls(entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "McsTable":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), source=str(path))

    @classmethod
    def default(cls) -> "McsTable":
        text = resources.files("mcsloc.data").joinpath("lte_ul_mcs.csv").read_text(encoding="utf-8")
        return cls.from_text(text, source="lte_ul_mcs.csv")

    def __getitem__(self, index: int) -> McsEntry:
        return self.lookup(index)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries.values(), key=lambda e: e.index))

    def lookup(self, index: int) -> McsEntry:
        if not MCS_MIN <= index <= MCS_MAX:
            raise DomainError(f"MCS index {index} outside [{MCS_MIN}, {MCS_MAX}]")
        try:
            return self._entries[index]
        except KeyError:
            raise DomainError(f"MCS index {index} is reserved (not defined by the active table)") from None


_DEFAULT_TABLE: McsTable | None = None


def mcs_table_lookup(index: int, table: McsTable | None = None) -> McsEntry:
    """Return the entry for ``index`` from ``table`` (default: LTE uplink fixture)."""
    global _DEFAULT_TABLE
    if table is None:
        if _DEFAULT_TABLE is None:
            _DEFAULT_TABLE = McsTable.default()
        table = _DEFAULT_TABLE
    return table.lookup(int(index))


@dataclass(frozen=True)
class SignalConfig:
    sample_rate_hz: float = 5_000_000.0
    occupied_bandwidth_hz: float = 1_400_000.0
    n_resource_blocks: int = 6
    subcarrier_spacing_hz: float = 15_000.0
    fft_size: int = 128
    cyclic_prefix_len: int = 9
    seed: int = 0
    # information bits per 1 ms subframe; None = full-buffer (all RBs, code rate inert)
    offered_load_bits: float | None = 832.0

    def __post_init__(self):
        if self.fft_size * self.subcarrier_spacing_hz < self.occupied_bandwidth_hz:
            raise ConfigError("fft_size * subcarrier_spacing_hz must cover the occupied bandwidth")
        if not self.occupied_bandwidth_hz < self.sample_rate_hz:
            raise ConfigError("occupied bandwidth must be below the sample rate")
        if self.n_resource_blocks * SUBCARRIERS_PER_RB > self.fft_size:
            raise ConfigError("resource blocks do not fit in the FFT")
        if self.n_resource_blocks < 1 or self.cyclic_prefix_len < 0:
            raise ConfigError("n_resource_blocks must be >= 1 and cyclic_prefix_len >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.offered_load_bits is not None and self.offered_load_bits <= 0:
            raise ConfigError("offered_load_bits must be positive or None")

    @property
    def base_rate_hz(self) -> float:
        return self.fft_size * self.subcarrier_spacing_hz

    @property
    def resample_ratio(self) -> Fraction:
        return Fraction(round(self.sample_rate_hz), round(self.base_rate_hz))


def allocated_resource_blocks(entry: McsEntry, cfg: SignalConfig) -> int:
    """Resource blocks needed to carry the offered load at this MCS."""
    if cfg.offered_load_bits is None:
        return cfg.n_resource_blocks
    bits_per_rb = SUBCARRIERS_PER_RB * DATA_SYMBOLS_PER_SUBFRAME * entry.spectral_efficiency
    n = math.ceil(cfg.offered_load_bits / bits_per_rb - 1e-9)
    return max(1, min(cfg.n_resource_blocks, n))


def qam_map(bits: np.ndarray, modulation_order: int) -> np.ndarray:
    """Gray-coded square QAM, unit average energy. ``bits`` has a trailing axis of length Qm."""
    q = modulation_order // 2
    weights = 1 << np.arange(q - 1, -1, -1)

    def axis(b):
        gray = (b * weights).sum(axis=-1)
        binary = gray.copy()
        shift = gray >> 1
        while shift.any():
            binary ^= shift
            shift >>= 1
        return 2 * binary - (2**q - 1)

    i = axis(bits[..., :q])
    qq = axis(bits[..., q:])
    scale = math.sqrt(2 * (2**modulation_order - 1) / 3)
    return (i + 1j * qq) / scale


def measure_power(signal: np.ndarray) -> float:
    """Mean power (1/L) * sum |s_i|^2."""
    signal = np.asarray(signal)
    if signal.size == 0:
        raise DomainError("cannot measure the power of an empty buffer")
    return float(np.mean(signal.real.astype(np.float64) ** 2 + signal.imag.astype(np.float64) ** 2))


def generate_baseband(entry: McsEntry, cfg: SignalConfig, n_samples: int, seed: int) -> np.ndarray:
    """Unit-power complex64 baseband of ``n_samples`` at ``cfg.sample_rate_hz``."""
    if n_samples <= 0:
        raise DomainError(f"n_samples must be positive, got {n_samples}")
    rng = np.random.default_rng(seed)
    ratio = cfg.resample_ratio
    sym_len = cfg.fft_size + cfg.cyclic_prefix_len
    lead = math.ceil(sym_len * ratio)  # one symbol of filter settling is dropped
    n_base = math.ceil((n_samples + lead) / ratio) + 1
    n_sym = -(-n_base // sym_len) + 1

    n_rb = allocated_resource_blocks(entry, cfg)
    n_sc = n_rb * SUBCARRIERS_PER_RB
    bits = rng.integers(0, 2, size=(n_sym, n_sc, entry.modulation_order), dtype=np.int64)
    data = qam_map(bits, entry.modulation_order)
    spread = np.fft.fft(data, axis=1) / math.sqrt(n_sc)

    first = -(cfg.n_resource_blocks * SUBCARRIERS_PER_RB) // 2
    first += SUBCARRIERS_PER_RB * ((cfg.n_resource_blocks - n_rb) // 2)
    bins = np.arange(first, first + n_sc) % cfg.fft_size
    grid = np.zeros((n_sym, cfg.fft_size), dtype=np.complex128)
    grid[:, bins] = spread
    td = np.fft.ifft(grid, axis=1) * math.sqrt(cfg.fft_size)
    td = np.concatenate([td[:, cfg.fft_size - cfg.cyclic_prefix_len:], td], axis=1).ravel()

    out = sps.resample_poly(td, ratio.numerator, ratio.denominator)[lead:lead + n_samples]
    out = out / math.sqrt(measure_power(out))
    return out.astype(np.complex64)


def apply_awgn(signal: np.ndarray, sinr_db: float, seed: int) -> np.ndarray:
    """Add circularly-symmetric Gaussian noise at ``sinr_db`` relative to the measured signal power.

    ``sinr_db = math.inf`` disables the noise and returns an exact copy.
    """
    signal = np.asarray(signal)
    if signal.size == 0:
        raise DomainError("cannot add noise to an empty buffer")
    if math.isinf(sinr_db) and sinr_db > 0:
        return signal.copy()
    var = measure_power(signal) * 10.0 ** (-sinr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, signal.size)) * math.sqrt(var / 2.0)
    out = signal.astype(np.complex128) + (noise[0] + 1j * noise[1])
    return out.astype(signal.dtype if np.iscomplexobj(signal) else np.complex64)


def check_iq(signal: np.ndarray) -> np.ndarray:
    """Validate an I/Q buffer: 1-D, complex, all components finite."""
    signal = np.asarray(signal)
    if signal.ndim != 1 or not np.iscomplexobj(signal):
        raise ValidationError("I/Q buffer must be a 1-D complex array")
    if not (np.isfinite(signal.real).all() and np.isfinite(signal.imag).all()):
        raise ValidationError("I/Q buffer contains NaN or Inf")
    return signal


def derive_seed(*keys: int | float) -> int:
    """Independent 64-bit seed for a tuple of keys (floats are keyed at 1e-3 resolution)."""
    ints = []
    for k in keys:
        if isinstance(k, float):
            k = round(k * 1000)
        k = int(k)
        # SeedSequence wants non-negative entropy
        ints.append(2 * k if k >= 0 else -2 * k - 1)
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0])
