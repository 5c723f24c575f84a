"""Held-out predictive evaluation of the topic model against the
independent Dirichlet-Categorical baseline, plus per-road maximum-likelihood
signal marginals for map-style outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .hdp import HdpHyper, HdpState, _dirichlet
from .util import sample_categorical_cols, stable_rng


@dataclass
class HeldoutSplit:
    """Per-document partition into observed and held-out words; the union
    is exactly the original document."""

    doc_keys: list
    w_obs: list[np.ndarray]
    w_ho: list[np.ndarray]
    vocab_size: int
    ratio: float
    seed: int

    @property
    def n_docs(self) -> int:
        return len(self.w_obs)

    def observed_corpus(self) -> Corpus:
        return Corpus(doc_keys=list(self.doc_keys), docs=[w.copy() for w in self.w_obs], vocab_size=self.vocab_size)


@dataclass
class PredictiveScore:
    avg_log_pred: float
    per_doc: list[tuple[object, int, int, float]]  # (doc_key, n_obs, n_ho, avg log pred)


def heldout_split(corpus: Corpus, ratio: float, seed: int) -> HeldoutSplit:
    """Uniform per-document split without replacement. Documents with fewer
    than 2 words go entirely to the observed side."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    w_obs, w_ho = [], []
    for j, doc in enumerate(corpus.docs):
        n = len(doc)
        if n < 2:
            w_obs.append(doc.copy())
            w_ho.append(np.empty(0, dtype=np.int64))
            continue
        n_ho = min(int(n * ratio), n - 1)
        rng = stable_rng(seed, 700, j)
        idx = rng.permutation(n)
        w_ho.append(doc[np.sort(idx[:n_ho])])
        w_obs.append(doc[np.sort(idx[n_ho:])])
    return HeldoutSplit(
        doc_keys=list(corpus.doc_keys),
        w_obs=w_obs,
        w_ho=w_ho,
        vocab_size=corpus.vocab_size,
        ratio=ratio,
        seed=seed,
    )


def _condition_doc(state: HdpState, hyper: HdpHyper, words: np.ndarray, rng, burn_in: int, n_avg: int) -> np.ndarray:
    """Posterior-mean document proportions given observed words, with the
    global variables (beta, theta) frozen: resample (z, pi) locally, then
    average the Dirichlet posterior mean of pi over the averaging window.
    Returns a (K+1,) vector (last entry = remainder mass)."""
    k = state.K
    ab = hyper.alpha * state.beta  # (K+1,)
    n_words = len(words)
    if n_words == 0:
        return ab / ab.sum()
    theta_w = state.theta[:, words]  # (K, n)
    pi = _dirichlet(rng, ab)
    acc = np.zeros(k + 1)
    for sweep in range(burn_in + n_avg):
        weights = pi[:k, None] * theta_w
        z = sample_categorical_cols(rng, weights)
        counts = np.bincount(z, minlength=k)
        conc = ab.copy()
        conc[:k] += counts
        pi = _dirichlet(rng, conc)
        if sweep >= burn_in:
            acc += conc / conc.sum()
    return acc / n_avg


def snapshot_predictive_matrix(state: HdpState) -> np.ndarray:
    """(K+1, V) word distributions: topics stacked with the uniform
    distribution standing in for the remainder mass."""
    return np.vstack([state.theta, np.full((1, state.V), 1.0 / state.V)])


def hdp_predictive(
    snapshots: list[HdpState],
    split: HeldoutSplit,
    hyper: HdpHyper,
    burn_in: int = 50,
    n_avg: int = 50,
    seed: int = 0,
) -> PredictiveScore:
    """Average log predictive probability of held-out words.

    For each snapshot, condition the document-local variables on the
    observed words (globals frozen), score each held-out word under the
    resulting mixture, average the probabilities across snapshots, and only
    then take logs."""
    if not snapshots:
        raise ValueError("need at least one snapshot")
    for s in snapshots:
        if s.V != split.vocab_size:
            raise ValueError("snapshot vocabulary does not match the split")
    probs: list[np.ndarray] = [np.zeros(len(w)) for w in split.w_ho]
    for si, state in enumerate(snapshots):
        word_dists = snapshot_predictive_matrix(state)
        for j in range(split.n_docs):
            ho = split.w_ho[j]
            if len(ho) == 0:
                continue
            rng = stable_rng(seed, 701, si, j)
            pi_post = _condition_doc(state, hyper, split.w_obs[j], rng, burn_in, n_avg)
            probs[j] += pi_post @ word_dists[:, ho]
    per_doc = []
    all_logs = []
    for j in range(split.n_docs):
        n_ho = len(split.w_ho[j])
        if n_ho == 0:
            per_doc.append((split.doc_keys[j], len(split.w_obs[j]), 0, float("nan")))
            continue
        logp = np.log(probs[j] / len(snapshots))
        assert np.all(np.isfinite(logp)) and np.all(logp <= 0)
        all_logs.append(logp)
        per_doc.append((split.doc_keys[j], len(split.w_obs[j]), n_ho, float(logp.mean())))
    avg = float(np.concatenate(all_logs).mean()) if all_logs else float("nan")
    return PredictiveScore(avg_log_pred=avg, per_doc=per_doc)


def baseline_predictive(split: HeldoutSplit, prior: float = 1.0) -> PredictiveScore:
    """Independent per-document Dirichlet-Categorical posterior predictive:
    p(w) = (count_obs(w) + prior) / (N_obs + V * prior)."""
    if prior <= 0:
        raise ValueError("prior must be positive")
    v = split.vocab_size
    per_doc = []
    all_logs = []
    for j in range(split.n_docs):
        obs = split.w_obs[j]
        ho = split.w_ho[j]
        counts = np.bincount(obs, minlength=v)
        pred = (counts + prior) / (len(obs) + v * prior)
        if len(ho) == 0:
            per_doc.append((split.doc_keys[j], len(obs), 0, float("nan")))
            continue
        logp = np.log(pred[ho])
        all_logs.append(logp)
        per_doc.append((split.doc_keys[j], len(obs), len(ho), float(logp.mean())))
    avg = float(np.concatenate(all_logs).mean()) if all_logs else float("nan")
    return PredictiveScore(avg_log_pred=avg, per_doc=per_doc)


def heldout_hook(split: HeldoutSplit, hyper: HdpHyper):
    """Cheap per-iteration held-out trace for sampler diagnostics: scores
    held-out words directly under the current state's document mixtures
    (the sampler itself must be running on the observed corpus)."""

    def hook(state: HdpState) -> float | None:
        word_dists = snapshot_predictive_matrix(state)
        logs = []
        for j in range(split.n_docs):
            ho = split.w_ho[j]
            if len(ho) == 0:
                continue
            p = state.pi[j] @ word_dists[:, ho]
            logs.append(np.log(p))
        if not logs:
            return None
        return float(np.concatenate(logs).mean())

    return hook


@dataclass
class SignalMarginals:
    v_dist: np.ndarray
    t_dist: np.ndarray
    v_bin: int
    t_bin: int


def mixture_word_dist(state: HdpState, doc: int) -> np.ndarray:
    """p_j(w) = sum_k pi_jk theta_k(w), remainder mass spread uniformly."""
    return state.pi[doc] @ snapshot_predictive_matrix(state)


def ml_marginals(state: HdpState, t_count: int, doc: int) -> SignalMarginals:
    """Per-signal ML estimates from the inferred mixture of topics: the
    joint word distribution marginalized over the (velocity, time) product
    structure. Argmax ties break to the lowest bin index."""
    p = mixture_word_dist(state, doc)
    assert abs(p.sum() - 1.0) < 1e-9
    joint = p.reshape(-1, t_count)
    v_dist = joint.sum(axis=1)
    t_dist = joint.sum(axis=0)
    return SignalMarginals(v_dist=v_dist, t_dist=t_dist, v_bin=int(np.argmax(v_dist)), t_bin=int(np.argmax(t_dist)))


def empirical_marginals(corpus: Corpus, doc: int, t_count: int) -> SignalMarginals:
    """Per-signal histograms of a document's raw words."""
    words = corpus.docs[doc]
    if len(words) == 0:
        raise ValueError("document is empty")
    counts = np.bincount(words, minlength=corpus.vocab_size).reshape(-1, t_count)
    v_hist = counts.sum(axis=1)
    t_hist = counts.sum(axis=0)
    return SignalMarginals(
        v_dist=v_hist.astype(float),
        t_dist=t_hist.astype(float),
        v_bin=int(np.argmax(v_hist)),
        t_bin=int(np.argmax(t_hist)),
    )


def scores_csv(path, split: HeldoutSplit, hdp_score: PredictiveScore, base_score: PredictiveScore) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("doc_id,n_obs,n_ho,avg_log_pred_hdp,avg_log_pred_baseline\n")
        for (key, n_obs, n_ho, h), (_, _, _, b) in zip(hdp_score.per_doc, base_score.per_doc):
            hv = "" if np.isnan(h) else repr(h)
            bv = "" if np.isnan(b) else repr(b)
            fh.write(f"{key},{n_obs},{n_ho},{hv},{bv}\n")
