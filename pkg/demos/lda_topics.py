"""
Topics from a synthetic corpus
==============================

Fit LDA to documents drawn from three sparse topics and print the top words
of each learned topic next to its best-matching true topic.
"""
import numpy as np

from avi import lda_fit, synth_lda
from avi.harness import matched_tv
from scipy.optimize import linear_sum_assignment

corpus, truth = synth_lda(K=3, V=30, D=300, c=100, concentration=0.05, seed=11)
print(corpus.D, "documents,", corpus.V, "word types")

fits = [lda_fit(corpus, 3, seed=s) for s in range(3)]
best = max(fits, key=lambda r: r.final_elbo)
topics = best.posterior.topics()

print("total variation after matching:", np.round(matched_tv(topics, truth["topics"]), 3))

cost = np.abs(topics[:, None, :] - truth["topics"][None, :, :]).sum(-1)
rows, cols = linear_sum_assignment(cost)
for k, j in zip(rows, cols):
    learned = np.argsort(topics[k])[::-1][:5]
    true = np.argsort(truth["topics"][j])[::-1][:5]
    print(f"topic {k}: {learned.tolist()}   true {true.tolist()}")
