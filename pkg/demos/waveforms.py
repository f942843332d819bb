"""Walk through the signal chain: MCS table, allocation, baseband, noise, windows.

Run: python3 demos/waveforms.py
"""
import numpy as np

from mcsloc.dataset import DatasetSpec, RecordingMeta, extract_windows
from mcsloc.phy import McsTable, SignalConfig, allocated_resource_blocks, apply_awgn, generate_baseband, measure_power

table = McsTable.default()
cfg = SignalConfig()

print("MCS  Qm  rate    RBs")
for mcs in range(8, 17):
    e = table.lookup(mcs)
    print(f"{mcs:3d}  {e.modulation_order:2d}  {e.code_rate:.3f}  {allocated_resource_blocks(e, cfg)}")

# Lower MCS needs more resource blocks to carry the same load, so occupied
# bandwidth is what separates classes that share a constellation.
n = 1 << 15
for mcs in (8, 12, 16):
    x = generate_baseband(table.lookup(mcs), cfg, n, seed=1)
    spec = np.abs(np.fft.fftshift(np.fft.fft(x))) ** 2
    occupied = np.mean(spec > 0.01 * spec.max())
    print(f"MCS {mcs}: power {measure_power(x):.3f}, occupied fraction of 5 MHz {occupied:.2f}")

x = generate_baseband(table.lookup(12), cfg, n, seed=1)
for sinr in (0.0, 10.0, 20.0):
    y = apply_awgn(x, sinr, seed=2)
    measured = 10 * np.log10(measure_power(x) / measure_power(y - x))
    print(f"target {sinr:4.1f} dB, measured {measured:5.2f} dB")

spec = DatasetSpec(windows_per_recording=4, samples_per_file=n)
meta = RecordingMeta(mcs=12, sinr_db=10.0, file_index=0, seed=1, sample_rate_hz=cfg.sample_rate_hz, n_samples=n)
windows = extract_windows(apply_awgn(x, 10.0, seed=2), meta, spec, seed=3)
print("windows:", [w.data.shape for w in windows], "label", windows[0].label,
      "mean square", round(float(np.mean(windows[0].data ** 2)), 3))
