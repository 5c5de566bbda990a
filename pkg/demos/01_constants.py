"""Closed-form constants and structural checks for the granular preset.

Prints the contraction rate for a few interaction strengths, then the full
condition report that `kel check` also emits.
"""
import json

from kel.model import ProbePlan, condition_report, granular, granular_thetas, kappa, twisted_constants

a, r = twisted_constants(1.0)
print(f"twisted metric at beta=1: a={a:.7f} r={r:.7f} (a*r={a * r:.3f})")

for theta in (0.0, 0.05, 0.2, 0.4):
    th1, th2 = granular_thetas(theta, 0.02, 1.0)
    if th1 + th2 < 1.0:
        print(f"theta={theta:<5} thetas=({th1:.4f}, {th2:.4f})  kappa={kappa(1.0, th1, th2):.6f}")
    else:
        print(f"theta={theta:<5} thetas=({th1:.4f}, {th2:.4f})  no contraction rate")

rep = condition_report(granular(1.0, 0.05, 0.02), 0.5, ProbePlan(n_states=2000))
print(json.dumps(rep.to_dict(), indent=2, default=str))
