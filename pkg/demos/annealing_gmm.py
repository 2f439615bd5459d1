"""
Annealing a Gaussian mixture
============================

Plain coordinate ascent, deterministic annealing and stochastic annealing on
the same synthetic six-cluster problem.  Every regime starts from the same
random initialization for a given restart, so the curves differ only in the
update rule.
"""
import numpy as np

from avi import Schedule, gmm_fit, synth_gmm

# six unit-variance clusters in the plane, means at least 3 sd apart
points, truth = synth_gmm(K=6, d=2, N=2000, separation=3.0, seed=3)
print("data:", points.X.shape, "true weights", np.round(truth["weights"], 3))

restarts = 10
runs = {regime: [gmm_fit(points.X, 6, Schedule(regime), seed=r) for r in range(restarts)]
        for regime in ("vi", "det", "stoch")}
finals = {regime: np.array([r.final_elbo for r in rs]) for regime, rs in runs.items()}
traces = {regime: rs[0].elbo for regime, rs in runs.items()}

for regime, f in finals.items():
    print(f"{regime:>5}  median {np.median(f):10.1f}  best {f.max():10.1f}  worst {f.min():10.1f}")

# the stochastic trace sits below plain VI while the random pulls are strong
# and only overtakes it once the step size has decayed
vi, st = traces["vi"], traces["stoch"]
L = min(len(vi), len(st))
for t in (1, 5, 10, 25, 50, L):
    print(f"t={t:3d}  vi {vi[t - 1]:10.1f}  stoch {st[t - 1]:10.1f}")

# the fitted means for the best stochastic run
best = max(runs["stoch"], key=lambda r: r.final_elbo)
print(np.round(best.posterior.m, 2))
