"""Dataset containers, text loaders/writers, k-means quantisation and
synthetic generators with known ground truth.

File formats (UTF-8, LF line endings):

* bag of words: header ``D V``, then one document per line as
  space-separated ``wordId:count`` pairs (ids in ``[0, V)``, counts >= 1);
* sequences: header ``N V``, then one line per sequence of space-separated
  integer codes in ``[0, V)``;
* points: headerless CSV, one point per row.  With ``labeled=True`` the
  last column is an integer class label.

Blank lines are not allowed inside the body of the first two formats: a
document or sequence with no tokens is an error.
"""
import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DataError, ParseError


@dataclass
class PointSet:
    X: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if not np.all(np.isfinite(self.X)):
            raise DataError("points must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.X.shape[0],):
                raise DataError("need exactly one label per point")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class SequenceSet:
    sequences: List[np.ndarray]
    V: int

    def __post_init__(self):
        self.sequences = [np.asarray(s, dtype=np.int64) for s in self.sequences]
        for i, s in enumerate(self.sequences):
            if s.ndim != 1 or s.size == 0:
                raise DataError(f"sequence {i} is empty")
            if s.min() < 0 or s.max() >= self.V:
                raise DataError(f"sequence {i} has a code outside [0, {self.V})")

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def n_tokens(self):
        return int(sum(s.size for s in self.sequences))

    @property
    def mean_length(self):
        return self.n_tokens / len(self.sequences)


@dataclass
class BowCorpus:
    """Documents as ``(word_ids, counts)`` pairs with unique ids per document."""

    docs: List[tuple]
    V: int
    _flat: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        docs = []
        for d, (ids, counts) in enumerate(self.docs):
            ids = np.asarray(ids, dtype=np.int64)
            counts = np.asarray(counts, dtype=float)
            if ids.size == 0:
                raise DataError(f"document {d} has no tokens")
            if ids.shape != counts.shape:
                raise DataError(f"document {d}: ids and counts differ in length")
            if ids.min() < 0 or ids.max() >= self.V:
                raise DataError(f"document {d} has a word id outside [0, {self.V})")
            if np.any(counts <= 0):
                raise DataError(f"document {d} has a non-positive count")
            if np.unique(ids).size != ids.size:
                uniq, inv = np.unique(ids, return_inverse=True)
                counts = np.bincount(inv, weights=counts)
                ids = uniq
            docs.append((ids, counts))
        self.docs = docs

    @property
    def D(self):
        return len(self.docs)

    @property
    def n_tokens(self):
        return float(sum(c.sum() for _, c in self.docs))

    @property
    def c(self):
        """Mean number of tokens per document."""
        return self.n_tokens / self.D if self.D else 0.0

    def flat(self):
        """(doc index, word id, count) arrays over all nonzero entries."""
        if self._flat is None:
            doc = np.concatenate([np.full(ids.size, d) for d, (ids, _) in enumerate(self.docs)]) \
                if self.docs else np.zeros(0, dtype=np.int64)
            word = np.concatenate([ids for ids, _ in self.docs]) if self.docs else np.zeros(0, dtype=np.int64)
            count = np.concatenate([c for _, c in self.docs]) if self.docs else np.zeros(0)
            self._flat = (doc, word, count)
        return self._flat

    def dense(self):
        out = np.zeros((self.D, self.V))
        for d, (ids, counts) in enumerate(self.docs):
            out[d, ids] = counts
        return out


# ---------------------------------------------------------------- loaders

def _read_lines(path):
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return text.split("\n")


def _header(lines, path, names):
    if not lines or not lines[0].strip():
        raise ParseError("missing header", path, 1)
    parts = lines[0].split()
    if len(parts) != 2:
        raise ParseError(f"header must be '{names}'", path, 1)
    try:
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"header must be two integers '{names}'", path, 1) from None
    if a < 0 or b < 1:
        raise ParseError("header sizes out of range", path, 1)
    return a, b


def _body(lines, expected, path):
    body = lines[1:]
    if body and body[-1] == "":
        body = body[:-1]
    if len(body) != expected:
        raise ParseError(f"header declares {expected} records, found {len(body)}", path, len(body) + 1)
    return body


def load_bow(path):
    lines = _read_lines(path)
    D, V = _header(lines, path, "D V")
    docs = []
    for i, line in enumerate(_body(lines, D, path), start=2):
        tokens = line.split()
        if not tokens:
            raise ParseError("document has no tokens", path, i)
        ids, counts = [], []
        for tok in tokens:
            w, sep, c = tok.partition(":")
            if not sep:
                raise ParseError(f"expected wordId:count, got {tok!r}", path, i)
            try:
                w, c = int(w), int(c)
            except ValueError:
                raise ParseError(f"non-integer entry {tok!r}", path, i) from None
            if not 0 <= w < V:
                raise DataError(f"{path}:{i}: word id {w} outside [0, {V})")
            if c < 1:
                raise DataError(f"{path}:{i}: count must be >= 1, got {c}")
            ids.append(w)
            counts.append(c)
        docs.append((ids, counts))
    return BowCorpus(docs, V)


def load_sequences(path):
    lines = _read_lines(path)
    N, V = _header(lines, path, "N V")
    seqs = []
    for i, line in enumerate(_body(lines, N, path), start=2):
        tokens = line.split()
        if not tokens:
            raise ParseError("empty sequence", path, i)
        try:
            codes = [int(t) for t in tokens]
        except ValueError:
            raise ParseError("codes must be integers", path, i) from None
        bad = [c for c in codes if not 0 <= c < V]
        if bad:
            raise DataError(f"{path}:{i}: code {bad[0]} outside [0, {V})")
        seqs.append(codes)
    return SequenceSet(seqs, V)


def load_points(path, labeled=False):
    rows, labels = [], []
    width = None
    with open(path, encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"expected {width} columns, got {len(row)}", path, i)
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ParseError("non-numeric value", path, i) from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"{path}:{i}: non-finite value")
            if labeled:
                if width < 2 or values[-1] != int(values[-1]):
                    raise ParseError("last column must be an integer label", path, i)
                labels.append(int(values[-1]))
                values = values[:-1]
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no points")
    return PointSet(np.array(rows), np.array(labels) if labeled else None)


# ---------------------------------------------------------------- writers

def write_bow(corpus, path):
    buf = io.StringIO()
    buf.write(f"{corpus.D} {corpus.V}\n")
    for ids, counts in corpus.docs:
        buf.write(" ".join(f"{int(w)}:{int(c)}" for w, c in zip(ids, counts)) + "\n")
    _write(path, buf.getvalue())


def write_sequences(seqs, path):
    buf = io.StringIO()
    buf.write(f"{len(seqs)} {seqs.V}\n")
    for s in seqs.sequences:
        buf.write(" ".join(str(int(c)) for c in s) + "\n")
    _write(path, buf.getvalue())


def write_points(points, path):
    buf = io.StringIO()
    for i, row in enumerate(points.X):
        cells = [repr(float(v)) for v in row]
        if points.labels is not None:
            cells.append(str(int(points.labels[i])))
        buf.write(",".join(cells) + "\n")
    _write(path, buf.getvalue())


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------- k-means

@dataclass
class Quantization:
    codebook: np.ndarray
    codes: np.ndarray
    wcss: List[float]

    def as_sequences(self, lengths):
        """Split the flat code array back into sequences of given lengths."""
        bounds = np.cumsum(lengths)[:-1]
        return SequenceSet(np.split(self.codes, bounds), self.codebook.shape[0])


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def assign_codes(X, codebook):
    """Nearest-centroid codes; ties go to the lowest index."""
    return np.argmin(_sq_dists(np.atleast_2d(X), codebook), axis=1)


def kmeans_quantize(points, V, iters=100, seed=0):
    """Lloyd's algorithm with a ``V``-entry codebook.

    Empty clusters are re-seeded to the point farthest from its centroid
    (skipped when every point already sits on its centroid).  ``wcss`` holds
    the within-cluster sum of squares after every assignment step.
    """
    X = np.atleast_2d(np.asarray(points.X if isinstance(points, PointSet) else points, dtype=float))
    N = X.shape[0]
    if V < 1 or N < V:
        raise ConfigError(f"k-means needs 1 <= V <= N, got V={V}, N={N}")
    rng = np.random.default_rng(seed)
    C = X[rng.choice(N, size=V, replace=False)].copy()
    wcss = []
    codes = None
    for _ in range(iters):
        d2 = _sq_dists(X, C)
        new_codes = np.argmin(d2, axis=1)
        cost = d2[np.arange(N), new_codes]
        counts = np.bincount(new_codes, minlength=V)
        taken = set()
        for j in np.flatnonzero(counts == 0):
            order = np.argsort(-cost, kind="stable")
            cand = next((i for i in order if i not in taken and cost[i] > 0
                         and counts[new_codes[i]] > 1), None)
            if cand is None:
                break
            taken.add(cand)
            counts[new_codes[cand]] -= 1
            new_codes[cand] = j
            counts[j] = 1
            C[j] = X[cand]
            cost[cand] = 0.0
        wcss.append(float(cost.sum()))
        if codes is not None and np.array_equal(new_codes, codes):
            break
        codes = new_codes
        for j in range(V):
            members = codes == j
            if members.any():
                C[j] = X[members].mean(axis=0)
    # final assignment against the final centroids
    d2 = _sq_dists(X, C)
    codes = np.argmin(d2, axis=1)
    final = float(d2[np.arange(N), codes].sum())
    if final < wcss[-1]:
        wcss.append(final)
    return Quantization(C, codes, wcss)


# ---------------------------------------------------------------- synthetic data

def synth_gmm(K, d, N, separation, seed, scale=1.0, max_tries=10_000):
    """Points from a K-component isotropic Gaussian mixture.

    Component means are drawn uniformly in a box and rejected until every
    pair is at least ``separation * scale`` apart (``scale`` is the component
    standard deviation).  ``separation = 0`` puts every mean at the origin.
    Returns ``(PointSet, truth)`` with truth keys ``weights``, ``means`` and
    ``covariances``; the point set carries the true labels.
    """
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.full(K, 20.0)) if K > 1 else np.ones(1)
    half_width = separation * scale * max(K, 2) ** (1.0 / d)
    means = np.zeros((K, d))
    if separation > 0:
        for k in range(K):
            for _ in range(max_tries):
                cand = rng.uniform(-half_width, half_width, size=d)
                if np.all(np.linalg.norm(means[:k] - cand, axis=1) >= separation * scale):
                    means[k] = cand
                    break
            else:
                raise ConfigError("could not place well-separated means; lower the separation")
    covs = np.repeat((scale ** 2 * np.eye(d))[None], K, axis=0)
    labels = rng.choice(K, size=N, p=weights)
    X = means[labels] + scale * rng.standard_normal((N, d))
    return PointSet(X, labels), {"weights": weights, "means": means, "covariances": covs}


def synth_hmm(K, V, N, c, seed, emissions=None, transitions=None, initial=None,
              stickiness=0.8, emission_concentration=0.2):
    """N sequences of length ``c`` from a K-state discrete HMM.

    Defaults: sticky transitions (``stickiness`` on the diagonal), sparse
    emission rows drawn from Dir(emission_concentration), uniform start.
    Returns ``(SequenceSet, truth)`` with keys ``initial``, ``transitions``,
    ``emissions``, ``states``.
    """
    rng = np.random.default_rng(seed)
    if initial is None:
        initial = np.full(K, 1.0 / K)
    if transitions is None:
        if K == 1:
            transitions = np.ones((1, 1))
        else:
            off = (1.0 - stickiness) / (K - 1)
            transitions = np.full((K, K), off) + (stickiness - off) * np.eye(K)
    if emissions is None:
        emissions = rng.dirichlet(np.full(V, emission_concentration), size=K)
    initial, transitions, emissions = (np.asarray(a, dtype=float) for a in (initial, transitions, emissions))
    c = int(c)
    seqs, states = [], []
    for _ in range(N):
        z = np.empty(c, dtype=np.int64)
        x = np.empty(c, dtype=np.int64)
        z[0] = rng.choice(K, p=initial)
        for t in range(c):
            if t:
                z[t] = rng.choice(K, p=transitions[z[t - 1]])
            x[t] = rng.choice(V, p=emissions[z[t]])
        seqs.append(x)
        states.append(z)
    truth = {"initial": initial, "transitions": transitions, "emissions": emissions, "states": states}
    return SequenceSet(seqs, V), truth


def synth_lda(K, V, D, c, concentration, seed, doc_concentration=None):
    """D documents with Poisson(c) tokens (at least one) from K topics.

    Topics are drawn from Dir(concentration); smaller values give sparser,
    better separated topics.  Document proportions use Dir(doc_concentration)
    (default 1/K).  Returns ``(BowCorpus, truth)`` with ``topics`` and
    ``proportions``.
    """
    rng = np.random.default_rng(seed)
    topics = rng.dirichlet(np.full(V, concentration), size=K)
    doc_concentration = 1.0 / K if doc_concentration is None else doc_concentration
    props = rng.dirichlet(np.full(K, doc_concentration), size=D)
    docs = []
    for d in range(D):
        n = max(1, int(rng.poisson(c)))
        counts = rng.multinomial(n, props[d] @ topics)
        ids = np.flatnonzero(counts)
        docs.append((ids, counts[ids]))
    return BowCorpus(docs, V), {"topics": topics, "proportions": props}
