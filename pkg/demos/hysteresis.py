"""Switching simulation around the fold: jumps, coexisting orbits, multipliers.

Sweeps the source voltage up and down with the exact piecewise-linear
simulator, then follows the harmonic-balance branch with Newton's method
on the one-period map to show the largest Floquet multiplier passing 1.
"""

from pathlib import Path

import numpy as np

from snblab import switching_sim as sim
from snblab.cli import load_config

spec = load_config(Path(__file__).with_name("multiloop_buck.toml")).converter
v_s = np.linspace(18.5, 21.0, 50)

for direction in ("up", "down"):
    pts = sim.sweep_hysteresis(spec, v_s, direction, settle_cycles=400)
    for j in sim.detect_jumps(pts):
        print(f"{direction}-sweep: v_o jumps {j.v_o_from:.2f} -> {j.v_o_to:.2f} V "
              f"between v_s = {j.v_s_from:.3f} and {j.v_s_to:.3f} V")

print("\nbranch (Newton from the forced-duty orbit):")
for p in sim.branch_curve(spec, np.linspace(0.66, 0.74, 9)):
    print(f"  D={p.D:.3f}  v_s={p.v_s:.4f}  v_o={p.v_o_avg:.3f}  "
          f"max multiplier={p.max_multiplier:.5f}  {'stable' if p.stable else 'unstable'}")

fold = sim.locate_fold(spec, np.linspace(0.6, 0.8, 41))
print(f"\nsimulated fold: D={fold.D:.5f}, v_s={fold.v_s:.4f} V, multiplier={fold.max_multiplier:.6f}")
