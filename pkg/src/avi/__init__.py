"""Mean-field variational inference with deterministic and stochastic
annealing for Gaussian mixtures, discrete HMMs and LDA."""
from .core import Exponential, Linear, Regime, RunResult, Schedule, annealed_update, \
    det_annealed_update, parse_decay
from .data import BowCorpus, PointSet, SequenceSet, kmeans_quantize, load_bow, load_points, \
    load_sequences, synth_gmm, synth_hmm, synth_lda
from .errors import AviError, ConfigError, DataError, InvariantError, ParseError, ScheduleError
from .gmm import gmm_classify, gmm_elbo, gmm_fit
from .hmm import hmm_elbo, hmm_fit, hmm_forward_backward
from .lda import lda_elbo, lda_fit

__version__ = "0.1.0"
