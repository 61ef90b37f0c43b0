"""Coarse-grained matrices on nested cubes for a few SOS samples.

abar(U) comes from Dirichlet problems with affine data, abar_*(U) from
Neumann problems with constant flux. They bracket the homogenized
coefficient and should close in on each other as the cube grows.
"""
import numpy as np

from sos_lab.coarsegrain import scale_sweep, summarize_sweep
from sos_lab.sampler import SamplerConfig, run_chain

res = run_chain(SamplerConfig(L=27, n_samples=10, burn_in=100, thinning=5, seed=3))
taus = [t for _, t in res.samples]
summary = summarize_sweep(scale_sweep(taus, 2))
for n, s in summary.items():
    a, a_star = np.array(s["abar"]), np.array(s["abar_star"])
    print(f"scale {n}: tr abar/2 = {np.trace(a) / 2:.4f}, tr abar_*/2 = {np.trace(a_star) / 2:.4f}, "
          f"gap = {s['gap']:.4f} +- {s['gap_se']:.4f}")
