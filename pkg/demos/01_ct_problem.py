"""Build a small CT problem by hand and look at its curvature constants."""

import numpy as np

from stochpnp import (CtGeometry, build_radon, least_squares, partition_by_angle,
                      poisson_observe, pwls, sampler_rng, shepp_logan)

# a 48x48 phantom seen from 60 angles, detectors sized to cover the diagonal
width = 48
phantom = shepp_logan(width)
geom = CtGeometry.for_image(width, 60)
A = build_radon(geom, width)
print("operator", A.shape, "nnz", A.matrix.nnz)

# attenuation is scaled so that line integrals are O(10), then photons are counted
c = 10.0 / width
obs = poisson_observe(A.scaled(c), phantom, 1e3, sampler_rng(0))
print("counts: min", obs.counts.min(), "max", obs.counts.max())

# the fidelity works in phantom units, hence the division by c
part = partition_by_angle(geom, K=6)
ls = least_squares(A, obs.log_sino / c, part)
wls = pwls(A, obs.log_sino / c, obs.weights, part)

for name, fid in [("least squares", ls), ("pwls", wls)]:
    lam_min, lam_full, lam_block = fid.hessian_bounds()
    mu, L = fid.constants()
    print(f"{name:14s} lambda_min={lam_min:.3g} lambda_max={lam_full:.3g} "
          f"block={lam_block:.3g}  mu={mu:.3g} L={L:.3g}")

# the mean of the K block gradients is the full gradient
x = np.full(fid.d, 0.2)
mean = np.mean([wls.grad_minibatch(x, k) for k in range(wls.K)], axis=0)
print("block-gradient mean error", np.abs(mean - wls.grad(x)).max())

# a ridge makes the problem strongly convex
print("with ridge 0.5: mu =", ls.with_ridge(0.5).mu)
