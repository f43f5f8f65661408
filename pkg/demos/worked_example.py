"""Fold of the multi-loop buck converter from its harmonic-balance branch.

Loads the shipped configuration, finds where the periodic branch turns
back (the saddle-node point), reads the same point off the S-plot, and
compares it with the two-integrator closed form.
"""

from pathlib import Path

import numpy as np

from snblab import critical
from snblab.cli import load_config

spec = load_config(Path(__file__).with_name("multiloop_buck.toml")).converter
print(f"ramp slope m_a = {spec.m_a:.0f} V/s, K = {spec.K:.4f}")

(fold,) = critical.find_snb(spec)
print(f"fold: D* = {fold.D_star:.5f}, v_s* = {fold.v_s_star:.4f} V, "
      f"v_o = D* v_s* = {fold.D_star * fold.v_s_star:.3f} V")

# The branch: each duty ratio has exactly one source voltage.
D = np.array([0.5, 0.6, 0.65, 0.7, 0.75, 0.8, 0.9])
for p in critical.s_curve(spec, D * spec.T):
    print(f"  D={p.D:.2f}  v_s={p.v_s_implied:8.4f}  S={p.s_value:8.1f}  {p.stable_hint}")

print(f"ramp slope needed to remove the fold: {critical.min_stabilizing_ramp(spec):.1f} V/s")

cf = critical.closed_form_state_feedback(spec)
print(f"closed-form duty {cf.critical_duty:.4f}; closed-form S at the fold {cf.s_plot(fold.D_star, fold.v_s_star):.1f}")
