"""From raw plane data to the boundary data of the inversion.

Run with ``python demos/02_preprocessing.py [out_dir]``.

The script simulates a buried cube at a band of frequencies, subtracts the
target-free scene, picks the stable frequency interval, finds the depth of
strongest response and builds the target footprint.  Curves are written as
CSV and PNG next to each other.
"""

import sys
from pathlib import Path

from helmgc.io import write_curve_csv
from helmgc.phantom import preset
from helmgc.pipeline import RunConfig, preprocess, simulate
from helmgc.report import save_curve_png

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)

cfg = RunConfig(f_first=33, f_last=83, sim_spacing=0.1)
data = simulate(preset("object6", noise=0.05), cfg)
pre = preprocess(data.target, data.reference, cfg)

iv = pre.interval
print(f"stable interval: {iv.count} frequencies from {pre.frequencies[iv.start]:.3f} "
      f"to {pre.frequencies[iv.stop - 1]:.3f} GHz; optimal {iv.optimal_frequency:.3f} GHz")
print(f"depth of strongest response z* = {pre.z_star:.2f}")
cx, cy = pre.footprint.centroid()
print(f"footprint: {int(pre.footprint.mask.sum())} nodes centred at ({cx:+.2f}, {cy:+.2f}); "
      f"the cube sits at (+0.50, -0.50)")

write_curve_csv(out / "frequency_curve.csv", ["frequency_ghz", "max_modulus"],
                zip(pre.frequencies, pre.peaks))
write_curve_csv(out / "z_curve.csv", ["z", "max_modulus"], zip(pre.z_values, pre.z_curve))
save_curve_png(out / "frequency_curve.png", pre.frequencies, pre.peaks, "frequency (GHz)",
               "max |propagated data|")
save_curve_png(out / "z_curve.png", pre.z_values, pre.z_curve, "z", "max |propagated data|")
