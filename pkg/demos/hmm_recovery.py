"""
Recovering HMM emissions
========================

Sample sequences from a sticky three-state HMM, fit it with variational
Bayes, and compare the learned emission rows with the truth after matching
states.
"""
import numpy as np

from avi import Schedule, hmm_fit, synth_hmm
from avi.harness import matched_tv

seqs, truth = synth_hmm(K=3, V=12, N=60, c=60, seed=7, emission_concentration=0.1)
print(len(seqs.sequences), "sequences over", seqs.V, "symbols")

fits = [hmm_fit(seqs, 3, seed=700 + s) for s in range(3)]
best = max(fits, key=lambda r: r.final_elbo)
print("final ELBOs:", [round(f.final_elbo, 1) for f in fits])

tv = matched_tv(best.posterior.mean_emissions(), truth["emissions"])
print("per-state total variation:", np.round(tv, 3))

# stochastic annealing uses the linear decay by default for the HMM
ann = hmm_fit(seqs, 3, Schedule("stoch", decay="linear:0.25:50"), seed=0)
print("stochAVI final ELBO", round(ann.final_elbo, 1), "after", len(ann.elbo), "iterations")
