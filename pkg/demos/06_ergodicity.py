"""Convergence of a granular particle system towards equilibrium.

The equilibrium proxy is the end state of an independent long run. The
squared W2 distance to it decays exponentially until it reaches the
sampling-noise floor; the k-NN relative entropy estimate follows.
"""
from pathlib import Path

from kel.experiments import ergodicity_experiment

rep = ergodicity_experiment(N=512, h=1e-2, T=10.0, record_every=0.5)
s = rep.summary
print(f"noise floor W2={s['floor']:.4f}; audit W2(0.8T, T)={s['audit_w2']:.4f} "
      f"(limit {s['audit_limit']:.4f})")
print(f"W2^2 rate {s['w2_rate']:.4f} vs threshold {s['threshold']:.4f}; "
      f"KL monotone within noise: {s['kl_monotone']}")
t, w = rep.series("w2_sq")
tk, kl = rep.series("kl_knn")
kl_at = dict(zip(tk, kl))
for ti, wi in zip(t, w):
    extra = f"  KL~{kl_at[ti]:.4f}" if ti in kl_at else ""
    print(f"  t={ti:5.1f}  W2^2={wi:.4e}{extra}")
out = Path(__file__).with_name("out")
print("written:", *rep.write(out, "ergodicity", svg=True))
