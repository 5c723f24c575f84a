"""HDP topic model over the road-segment corpus: a direct-assignment
restricted Gibbs sampler augmented with per-topic left/right sub-clusters
whose fitted bipartitions drive Metropolis-Hastings split and merge moves.

Global proportions carry an explicit remainder component for unseen topics.
Table counts are sampled by the Chinese-restaurant construction (a sum of
independent Bernoullis), which realizes the Stirling-number conditional
without ever evaluating Stirling numbers. Split/merge acceptance ratios are
computed in log space from Dirichlet-multinomial marginals; because both
move directions propose table counts through the same construction, the
Stirling factors cancel from the Hastings ratio analytically.
"""

from __future__ import annotations


import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .corpus import Corpus
from .util import sample_categorical_cols, stable_rng

_GLOBAL_STREAM = 1_000_000


@dataclass(frozen=True)
class HdpHyper:
    gamma: float = 10.0  # top-level concentration
    alpha: float = 0.1  # document-level concentration
    lam: float = 0.5  # symmetric Dirichlet over the vocabulary

    def __post_init__(self):
        if min(self.gamma, self.alpha, self.lam) <= 0:
            raise ValueError("all concentration parameters must be positive")


class HdpState:
    """Full sampler state.

    Arrays indexed by topic k < K; ``beta`` and each ``pi[j]`` carry one
    extra trailing component holding the remainder mass of unseen topics.
    Count arrays (n, nbar, ckw, cbar) are always exact recounts of (z, zbar).

    Words, labels, and sub-labels live in flat arrays over all documents;
    ``docs[j]``, ``z[j]``, ``zbar[j]`` are views into them, so per-document
    updates and corpus-wide vectorized recounts share storage. Per-document
    label writes must therefore be in place (``z[j][:] = ...``).
    """

    def __init__(self, docs: list[np.ndarray], vocab_size: int):
        sizes = np.array([len(d) for d in docs], dtype=np.int64)
        self.V = int(vocab_size)
        self.D = len(docs)
        self.K = 0
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.n_words = int(self.offsets[-1])
        self.w_flat = np.concatenate([np.asarray(d, dtype=np.int64) for d in docs]) if self.n_words else np.empty(0, dtype=np.int64)
        self.doc_of = np.repeat(np.arange(self.D), sizes)
        self.z_flat = np.zeros(self.n_words, dtype=np.int64)
        self.zbar_flat = np.zeros(self.n_words, dtype=np.int64)
        self.docs = [self.w_flat[self.offsets[j] : self.offsets[j + 1]] for j in range(self.D)]
        self.z = [self.z_flat[self.offsets[j] : self.offsets[j + 1]] for j in range(self.D)]
        self.zbar = [self.zbar_flat[self.offsets[j] : self.offsets[j + 1]] for j in range(self.D)]
        self.beta = np.array([1.0])
        self.pi = np.ones((self.D, 1))
        self.theta = np.zeros((0, self.V))
        self.m = np.zeros((self.D, 0), dtype=np.int64)
        self.beta_bar = np.zeros((0, 2))
        self.pi_bar = np.zeros((self.D, 0, 2))
        self.theta_bar = np.zeros((0, 2, self.V))
        self.mbar = np.zeros((self.D, 0, 2), dtype=np.int64)
        self.n = np.zeros((self.D, 0), dtype=np.int64)
        self.nbar = np.zeros((self.D, 0, 2), dtype=np.int64)
        self.ckw = np.zeros((0, self.V), dtype=np.int64)
        self.cbar = np.zeros((0, 2, self.V), dtype=np.int64)

    # -- counts ------------------------------------------------------------

    def recount(self) -> None:
        k = self.K
        self.n = np.bincount(self.doc_of * k + self.z_flat, minlength=self.D * k).reshape(self.D, k)
        self.nbar = np.bincount(
            (self.doc_of * k + self.z_flat) * 2 + self.zbar_flat, minlength=self.D * k * 2
        ).reshape(self.D, k, 2)
        self.ckw = np.bincount(self.z_flat * self.V + self.w_flat, minlength=k * self.V).reshape(k, self.V)
        self.cbar = np.bincount(
            (self.z_flat * 2 + self.zbar_flat) * self.V + self.w_flat, minlength=k * 2 * self.V
        ).reshape(k, 2, self.V)

    def doc_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def audit(self, require_nonempty: bool = True) -> None:
        """Raise if any structural invariant is violated."""
        k = self.K
        assert self.beta.shape == (k + 1,) and abs(self.beta.sum() - 1.0) < 1e-9
        assert self.pi.shape == (self.D, k + 1)
        assert np.allclose(self.pi.sum(axis=1), 1.0, atol=1e-9)
        assert self.theta.shape == (k, self.V)
        if k:
            assert np.allclose(self.theta.sum(axis=1), 1.0, atol=1e-9)
            assert np.allclose(self.beta_bar.sum(axis=1), 1.0, atol=1e-9)
            assert np.allclose(self.pi_bar.sum(axis=2), 1.0, atol=1e-9)
            assert np.allclose(self.theta_bar.sum(axis=2), 1.0, atol=1e-9)
        if self.n_words:
            assert self.z_flat.min() >= 0 and self.z_flat.max() < k
            assert set(np.unique(self.zbar_flat)) <= {0, 1}
        n = np.bincount(self.doc_of * k + self.z_flat, minlength=self.D * k).reshape(self.D, k)
        nbar = np.bincount(
            (self.doc_of * k + self.z_flat) * 2 + self.zbar_flat, minlength=self.D * k * 2
        ).reshape(self.D, k, 2)
        ckw = np.bincount(self.z_flat * self.V + self.w_flat, minlength=k * self.V).reshape(k, self.V)
        assert np.array_equal(n, self.n), "n_jk out of sync with z"
        assert np.array_equal(nbar, self.nbar), "sub-counts out of sync with (z, zbar)"
        assert np.array_equal(ckw, self.ckw), "topic-word counts out of sync"
        assert np.array_equal(self.nbar.sum(axis=2), self.n), "sub-counts do not partition topic counts"
        assert np.array_equal(n.sum(axis=1), self.doc_sizes())
        if require_nonempty and k:
            assert self.n.sum(axis=0).min() > 0, "empty topic in the active set"

    def snapshot(self) -> "HdpState":
        s = HdpState([d.copy() for d in self.docs], self.V)
        s.K = self.K
        s.z_flat[:] = self.z_flat
        s.zbar_flat[:] = self.zbar_flat
        for name in ("beta", "pi", "theta", "m", "beta_bar", "pi_bar", "theta_bar", "mbar"):
            setattr(s, name, getattr(self, name).copy())
        s.recount()
        return s


@dataclass
class SamplerDiagnostics:
    iterations: list[int] = field(default_factory=list)
    k: list[int] = field(default_factory=list)
    loglik: list[float] = field(default_factory=list)
    accepts_split: list[int] = field(default_factory=list)
    accepts_merge: list[int] = field(default_factory=list)
    heldout_ll: list[float | None] = field(default_factory=list)

    def append(self, iteration, k, loglik, asplit, amerge, heldout):
        self.iterations.append(int(iteration))
        self.k.append(int(k))
        self.loglik.append(float(loglik))
        self.accepts_split.append(int(asplit))
        self.accepts_merge.append(int(amerge))
        self.heldout_ll.append(None if heldout is None else float(heldout))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,K,loglik,accepts_split,accepts_merge,heldout_ll\n")
            for row in zip(self.iterations, self.k, self.loglik, self.accepts_split, self.accepts_merge, self.heldout_ll):
                ho = "" if row[5] is None else repr(row[5])
                fh.write(f"{row[0]},{row[1]},{row[2]!r},{row[3]},{row[4]},{ho}\n")


# ---------------------------------------------------------------------------
# Primitive draws


def _dirichlet(rng: np.random.Generator, conc: np.ndarray, axis: int = -1) -> np.ndarray:
    g = rng.gamma(np.asarray(conc, dtype=float))
    total = g.sum(axis=axis, keepdims=True)
    return g / np.where(total > 0, total, 1.0)


def sample_table_counts(a, n, rng: np.random.Generator) -> np.ndarray:
    """Number of tables in a CRP(a) after n customers, for each (a, n) pair:
    sum over i=1..n of independent Bernoulli(a / (a + i - 1)). Exactly
    realizes the unsigned-Stirling-number conditional for the table counts."""
    a = np.asarray(a, dtype=float).ravel()
    n = np.asarray(n, dtype=np.int64).ravel()
    total = int(n.sum())
    m = np.zeros(n.shape, dtype=np.int64)
    if total == 0:
        return m
    reps = np.repeat(a, n)
    seg = np.repeat(np.arange(len(n)), n)
    starts = np.concatenate([[0], np.cumsum(n)[:-1]])
    idx = np.arange(total) - np.repeat(starts, n)  # 0-based: i - 1
    p = np.ones(total)
    nz = idx > 0
    p[nz] = reps[nz] / (reps[nz] + idx[nz])
    draws = rng.random(total) < p
    np.add.at(m, seg[draws], 1)
    return m


def _doc_rng(rngs, j: int) -> np.random.Generator:
    if isinstance(rngs, (list, tuple)):
        return rngs[j]
    return rngs


# ---------------------------------------------------------------------------
# Restricted Gibbs sweep (global-proportion, document, topic updates)


def sample_beta(state: HdpState, hyper: HdpHyper, rng: np.random.Generator) -> None:
    """beta ~ Dir(m_.1, ..., m_.K, gamma)."""
    conc = np.concatenate([state.m.sum(axis=0).astype(float), [hyper.gamma]])
    state.beta = _dirichlet(rng, conc)


def sample_pi(state: HdpState, hyper: HdpHyper, rngs) -> None:
    """pi_j ~ Dir(alpha*beta_1 + n_j1, ..., alpha*beta_K + n_jK, alpha*beta_rem)."""
    base = hyper.alpha * state.beta
    for j in range(state.D):
        conc = base.copy()
        conc[: state.K] += state.n[j]
        state.pi[j] = _dirichlet(_doc_rng(rngs, j), conc)


def sample_theta(state: HdpState, hyper: HdpHyper, rng: np.random.Generator) -> None:
    """theta_k ~ Dir(lam + word counts of topic k)."""
    if state.K:
        state.theta = _dirichlet(rng, hyper.lam + state.ckw.astype(float), axis=1)


def sample_z(state: HdpState, hyper: HdpHyper, rngs, remove_empty: bool = True) -> None:
    """z_ji ~ Cat over the K existing topics with weight pi_jk * theta_k(x);
    empty topics are then removed, folding their beta into the remainder."""
    for j in range(state.D):
        w = state.docs[j]
        if len(w) == 0:
            continue
        weights = state.pi[j, : state.K, None] * state.theta[:, w]
        state.z[j][:] = sample_categorical_cols(_doc_rng(rngs, j), weights)
    state.recount()
    if remove_empty:
        empty = np.where(state.n.sum(axis=0) == 0)[0]
        if len(empty):
            _remove_topics(state, empty)


def sample_m(state: HdpState, hyper: HdpHyper, rngs) -> None:
    """m_jk from the table construction with weight alpha*beta_k."""
    a = hyper.alpha * state.beta[: state.K]
    for j in range(state.D):
        state.m[j] = sample_table_counts(a, state.n[j], _doc_rng(rngs, j))


def sample_subclusters(state: HdpState, hyper: HdpHyper, rngs, rng_global: np.random.Generator | None = None) -> None:
    """One sweep of the left/right sub-cluster equations, interleaved with
    the main sweep: beta_bar, pi_bar, theta_bar, zbar, mbar."""
    if state.K == 0:
        return
    if rng_global is None:
        if isinstance(rngs, (list, tuple)):
            raise ValueError("rng_global required when per-document streams are used")
        rng_global = rngs
    state.beta_bar = _dirichlet(rng_global, hyper.gamma + state.mbar.sum(axis=0).astype(float), axis=1)
    for j in range(state.D):
        conc = hyper.alpha * state.beta_bar + state.nbar[j]
        state.pi_bar[j] = _dirichlet(_doc_rng(rngs, j), conc, axis=1)
    state.theta_bar = _dirichlet(rng_global, hyper.lam + state.cbar.astype(float), axis=2)
    for j in range(state.D):
        w = state.docs[j]
        if len(w) == 0:
            continue
        zj = state.z[j]
        p = state.pi_bar[j, zj, :] * state.theta_bar[zj, :, w]  # (n_j, 2)
        tot = p.sum(axis=1, keepdims=True)
        pr = np.where(tot > 0, p / np.where(tot > 0, tot, 1.0), 0.5)
        state.zbar[j][:] = _doc_rng(rngs, j).random(len(w)) < pr[:, 1]
    state.recount()
    a = hyper.alpha * state.beta_bar
    for j in range(state.D):
        state.mbar[j] = sample_table_counts(
            np.broadcast_to(a, (state.K, 2)), state.nbar[j], _doc_rng(rngs, j)
        ).reshape(state.K, 2)


def _remove_topics(state: HdpState, ks) -> None:
    ks = sorted(int(k) for k in ks)
    keep = [k for k in range(state.K) if k not in ks]
    relabel = -np.ones(state.K, dtype=np.int64)
    relabel[keep] = np.arange(len(keep))
    if state.n_words:
        state.z_flat[:] = relabel[state.z_flat]
    state.beta = np.concatenate([state.beta[keep], [state.beta[-1] + state.beta[ks].sum()]])
    state.pi = np.concatenate([state.pi[:, keep], (state.pi[:, -1] + state.pi[:, ks].sum(axis=1))[:, None]], axis=1)
    state.theta = state.theta[keep]
    state.m = state.m[:, keep]
    state.beta_bar = state.beta_bar[keep]
    state.pi_bar = state.pi_bar[:, keep]
    state.theta_bar = state.theta_bar[keep]
    state.mbar = state.mbar[:, keep]
    state.K = len(keep)
    state.recount()


# ---------------------------------------------------------------------------
# Initialization


def init_state(corpus: Corpus, hyper: HdpHyper, k0: int, seed: int, allow_empty: bool = False) -> HdpState:
    """Uniform-random topic labels over k0 topics; every other variable is
    then drawn from its conditional given z."""
    if k0 < 1:
        raise ValueError("K0 must be >= 1")
    if corpus.n_docs == 0:
        raise ValueError("corpus is empty")
    state = HdpState(corpus.docs, corpus.vocab_size)
    state.K = k0
    for j in range(state.D):
        rng = stable_rng(seed, 900, j)
        state.z[j][:] = rng.integers(0, k0, size=len(state.docs[j]), dtype=np.int64)
        state.zbar[j][:] = rng.random(len(state.docs[j])) < 0.5
    state.m = np.zeros((state.D, k0), dtype=np.int64)
    state.mbar = np.zeros((state.D, k0, 2), dtype=np.int64)
    state.beta_bar = np.full((k0, 2), 0.5)
    state.pi_bar = np.full((state.D, k0, 2), 0.5)
    state.recount()
    if not allow_empty:
        empty = np.where(state.n.sum(axis=0) == 0)[0]
        if len(empty):
            state.theta = np.zeros((state.K, state.V))
            state.pi = np.ones((state.D, state.K + 1)) / (state.K + 1)
            state.beta = np.ones(state.K + 1) / (state.K + 1)
            _remove_topics(state, empty)

    k = state.K
    grng = stable_rng(seed, 901)
    # bootstrap m with a uniform beta, then sample the rest bottom-up
    boot = np.full(k, hyper.alpha / (k + 1))
    for j in range(state.D):
        rng = stable_rng(seed, 902, j)
        state.m[j] = sample_table_counts(boot, state.n[j], rng)
        state.mbar[j] = sample_table_counts(np.full((k, 2), hyper.alpha * 0.5), state.nbar[j], rng).reshape(k, 2)
    sample_beta(state, hyper, grng)
    state.pi = np.ones((state.D, k + 1)) / (k + 1)
    sample_pi(state, hyper, [stable_rng(seed, 903, j) for j in range(state.D)])
    state.theta = np.zeros((k, state.V))
    sample_theta(state, hyper, grng)
    state.beta_bar = _dirichlet(grng, hyper.gamma + state.mbar.sum(axis=0).astype(float), axis=1)
    state.pi_bar = np.zeros((state.D, k, 2))
    for j in range(state.D):
        state.pi_bar[j] = _dirichlet(stable_rng(seed, 904, j), hyper.alpha * state.beta_bar + state.nbar[j], axis=1)
    state.theta_bar = _dirichlet(grng, hyper.lam + state.cbar.astype(float), axis=2)
    return state


# ---------------------------------------------------------------------------
# Split / merge proposals


def _dirmult_word_ll(counts: np.ndarray, lam: float, v: int) -> float:
    """log Dirichlet-multinomial marginal of one topic's word counts."""
    counts = np.asarray(counts, dtype=float)
    return float(
        gammaln(v * lam)
        - gammaln(v * lam + counts.sum())
        + gammaln(lam + counts).sum()
        - v * gammaln(lam)
    )


def _anchor_bipartition(state: HdpState, k: int, rng: np.random.Generator) -> None:
    """Seed topic k's word bipartition from two anchor word types (drawn by
    count); remaining occurrences go to a uniform random side. Restarting a
    stuck sub-cluster fit this way makes separable structure reachable."""
    counts = state.ckw[k]
    types = np.where(counts > 0)[0]
    anchors = None
    if len(types) >= 2:
        p = counts[types] / counts[types].sum()
        anchors = rng.choice(types, size=2, replace=False, p=p)
    idx = np.where(state.z_flat == k)[0]
    side = (rng.random(len(idx)) < 0.5).astype(np.int64)
    if anchors is not None:
        words = state.w_flat[idx]
        side[words == anchors[0]] = 0
        side[words == anchors[1]] = 1
    state.zbar_flat[idx] = side


def _recount_subtopics(state: HdpState, ks) -> None:
    """Refresh the sub-cluster counts of the given topics only (z and the
    main counts are untouched)."""
    for k in ks:
        idx = np.where(state.z_flat == k)[0]
        b = state.zbar_flat[idx]
        state.nbar[:, k, :] = np.bincount(
            state.doc_of[idx] * 2 + b, minlength=state.D * 2
        ).reshape(state.D, 2)
        state.cbar[k] = np.bincount(b * state.V + state.w_flat[idx], minlength=2 * state.V).reshape(2, state.V)


def _doc_dirmult_delta(alpha_betas_new: list[tuple[float, np.ndarray]], alpha_betas_old: list[tuple[float, np.ndarray]]) -> float:
    """Change in the per-document Dirichlet-multinomial marginals
    sum_j [lnG(a + n_j) - lnG(a)] when topics are restructured."""
    total = 0.0
    for a, n in alpha_betas_new:
        total += float((gammaln(a + n) - gammaln(a)).sum())
    for a, n in alpha_betas_old:
        total -= float((gammaln(a + n) - gammaln(a)).sum())
    return total


def _bipartition_log_prob(state: HdpState, idx: np.ndarray, side: np.ndarray, pi_lr: np.ndarray, theta_lr: np.ndarray) -> float:
    """Log-probability of assigning the words at flat indices ``idx`` to
    their given sides under a two-component (proportions, word-distribution)
    model: the density of the final assignment sweep that a (reverse) split
    move would need to regenerate."""
    if len(idx) == 0:
        return 0.0
    w = state.w_flat[idx]
    p = pi_lr[state.doc_of[idx], :] * theta_lr[:, w].T  # (n, 2)
    tot = p.sum(axis=1)
    pr = p[np.arange(len(w)), side] / np.where(tot > 0, tot, 1.0)
    return float(np.log(np.maximum(pr, 1e-300)).sum())


def propose_split(state: HdpState, k: int, hyper: HdpHyper, rng: np.random.Generator) -> bool:
    """Propose splitting topic k along its fitted sub-clusters.

    The proposal is fully deterministic given the augmented state: word
    assignments come from zbar, the children's global proportions split
    beta_k by beta_bar, document proportions split by pi_bar, parameters
    come from theta_bar, and the sub-cluster table counts mbar become the
    children's table counts. The Hastings ratio therefore reduces to the
    Dirichlet-multinomial word marginals, the per-document proportion
    marginals, and the top-level table bookkeeping. On accept, the children
    take slot k and a new trailing slot, with anchor-seeded fresh
    sub-cluster records; on reject, the state is unchanged."""
    n_k = state.n[:, k]
    if n_k.sum() < 2:
        return False
    n_a = state.nbar[:, k, 0]
    n_b = state.nbar[:, k, 1]
    if n_a.sum() == 0 or n_b.sum() == 0:
        return False

    alpha, gamma = hyper.alpha, hyper.gamma
    beta_hat = state.beta[k] * state.beta_bar[k]  # (2,)
    m_hat_a = state.mbar[:, k, 0]
    m_hat_b = state.mbar[:, k, 1]
    m_k = state.m[:, k]
    m_tot = state.m.sum()
    m_hat_tot = m_tot - m_k.sum() + m_hat_a.sum() + m_hat_b.sum()

    # probability of the forward launch state: the sub-cluster sweep that
    # produced the proposed bipartition (reverse merges are deterministic)
    idx = np.where(state.z_flat == k)[0]
    ln_q_fwd = _bipartition_log_prob(
        state, idx, state.zbar_flat[idx], state.pi_bar[:, k, :], state.theta_bar[k]
    )

    ln_h = (
        _dirmult_word_ll(state.cbar[k, 0], hyper.lam, state.V)
        + _dirmult_word_ll(state.cbar[k, 1], hyper.lam, state.V)
        - _dirmult_word_ll(state.ckw[k], hyper.lam, state.V)
        + _doc_dirmult_delta(
            [(alpha * beta_hat[0], n_a), (alpha * beta_hat[1], n_b)],
            [(alpha * state.beta[k], n_k)],
        )
        + np.log(gamma)
        + gammaln(max(m_hat_a.sum(), 1))
        + gammaln(max(m_hat_b.sum(), 1))
        - gammaln(max(m_k.sum(), 1))
        + gammaln(gamma + m_tot)
        - gammaln(gamma + m_hat_tot)
        - np.log(state.K)
        - ln_q_fwd
    )
    if np.log(rng.random()) >= min(0.0, ln_h):
        return False
    _apply_split(state, k, m_hat_a.copy(), m_hat_b.copy(), hyper, rng)
    return True


def propose_merge(state: HdpState, k1: int, k2: int, hyper: HdpHyper, rng: np.random.Generator) -> bool:
    """Propose merging topics k1 and k2 into one topic whose sub-clusters
    are the former topics (table counts add). Mirror image of the split."""
    if k1 == k2:
        raise ValueError("merge needs two distinct topics")
    k1, k2 = min(k1, k2), max(k1, k2)
    alpha, gamma = hyper.alpha, hyper.gamma
    n_1 = state.n[:, k1]
    n_2 = state.n[:, k2]
    n_k = n_1 + n_2
    beta_merged = state.beta[k1] + state.beta[k2]
    m_1, m_2 = state.m[:, k1], state.m[:, k2]
    m_hat = m_1 + m_2

    # probability that a reverse split of the merged topic regenerates the
    # current pair, under the merged topic's induced sub-cluster state
    tot = state.pi[:, k1] + state.pi[:, k2]
    pi_lr = np.stack([state.pi[:, k1], state.pi[:, k2]], axis=1) / np.where(tot[:, None] > 0, tot[:, None], 1.0)
    pi_lr[tot <= 0] = 0.5
    theta_lr = np.stack([state.theta[k1], state.theta[k2]])

    idx = np.where((state.z_flat == k1) | (state.z_flat == k2))[0]
    ln_q_rev = _bipartition_log_prob(state, idx, (state.z_flat[idx] == k2).astype(int), pi_lr, theta_lr)

    ln_h = (
        _dirmult_word_ll(state.ckw[k1] + state.ckw[k2], hyper.lam, state.V)
        - _dirmult_word_ll(state.ckw[k1], hyper.lam, state.V)
        - _dirmult_word_ll(state.ckw[k2], hyper.lam, state.V)
        + _doc_dirmult_delta(
            [(alpha * beta_merged, n_k)],
            [(alpha * state.beta[k1], n_1), (alpha * state.beta[k2], n_2)],
        )
        - np.log(gamma)
        + gammaln(max(m_hat.sum(), 1))
        - gammaln(max(m_1.sum(), 1))
        - gammaln(max(m_2.sum(), 1))
        + np.log(state.K - 1)
        + ln_q_rev
    )
    if np.log(rng.random()) >= min(0.0, ln_h):
        return False
    _apply_merge(state, k1, k2, m_hat, hyper, rng)
    return True


def _fresh_subrecords(state: HdpState, topics, hyper: HdpHyper, rng: np.random.Generator) -> None:
    """Re-seed the sub-cluster augmentation for the given topics (fresh
    anchor bipartition, neutral proportions, parameters from conditionals).
    Used for split children and for restarting stuck sub-cluster fits."""
    for k in topics:
        _anchor_bipartition(state, k, rng)
    _recount_subtopics(state, topics)
    for k in topics:
        state.beta_bar[k] = 0.5
        state.pi_bar[:, k, :] = 0.5
        state.theta_bar[k] = _dirichlet(rng, hyper.lam + state.cbar[k].astype(float), axis=1)
        state.mbar[:, k, :] = sample_table_counts(
            np.full((state.D, 2), hyper.alpha * 0.5), state.nbar[:, k, :], rng
        ).reshape(state.D, 2)


def _apply_split(state: HdpState, k: int, m_hat_a, m_hat_b, hyper: HdpHyper, rng: np.random.Generator) -> None:
    k_new = state.K
    move = (state.z_flat == k) & (state.zbar_flat == 1)
    state.z_flat[move] = k_new
    beta_k = state.beta[k]
    bbar = state.beta_bar[k].copy()
    state.beta = np.insert(state.beta, k_new, beta_k * bbar[1])
    state.beta[k] = beta_k * bbar[0]
    pi_k = state.pi[:, k].copy()
    pbar = state.pi_bar[:, k, :].copy()
    state.pi = np.insert(state.pi, k_new, pi_k * pbar[:, 1], axis=1)
    state.pi[:, k] = pi_k * pbar[:, 0]
    tbar = state.theta_bar[k].copy()
    state.theta = np.insert(state.theta, k_new, tbar[1], axis=0)
    state.theta[k] = tbar[0]
    state.m = np.insert(state.m, k_new, m_hat_b, axis=1)
    state.m[:, k] = m_hat_a
    state.beta_bar = np.insert(state.beta_bar, k_new, 0.5, axis=0)
    state.pi_bar = np.insert(state.pi_bar, k_new, 0.5, axis=1)
    state.theta_bar = np.insert(state.theta_bar, k_new, tbar, axis=0)
    state.mbar = np.insert(state.mbar, k_new, 0, axis=1)
    state.K += 1
    state.recount()
    _fresh_subrecords(state, [k, k_new], hyper, rng)


def _apply_merge(state: HdpState, k1: int, k2: int, m_hat, hyper: HdpHyper, rng: np.random.Generator) -> None:
    n1 = state.n[:, k1].sum()
    n2 = state.n[:, k2].sum()
    # former topics become the merged topic's sub-clusters
    in1 = state.z_flat == k1
    in2 = state.z_flat == k2
    state.zbar_flat[in1] = 0
    state.zbar_flat[in2] = 1
    state.z_flat[in2] = k1
    b1, b2 = state.beta[k1], state.beta[k2]
    state.beta_bar[k1] = np.array([b1, b2]) / (b1 + b2)
    tot = state.pi[:, k1] + state.pi[:, k2]
    with np.errstate(invalid="ignore", divide="ignore"):
        pb = np.where(tot[:, None] > 0, np.stack([state.pi[:, k1], state.pi[:, k2]], axis=1) / np.where(tot[:, None] > 0, tot[:, None], 1.0), 0.5)
    state.pi_bar[:, k1, :] = pb
    state.theta_bar[k1] = np.stack([state.theta[k1], state.theta[k2]])
    state.mbar[:, k1, 0] = state.m[:, k1]
    state.mbar[:, k1, 1] = state.m[:, k2]
    w1 = n1 / max(1, n1 + n2)
    state.theta[k1] = w1 * state.theta[k1] + (1 - w1) * state.theta[k2]
    state.beta[k1] = b1 + b2
    state.pi[:, k1] = tot
    state.m[:, k1] = m_hat

    keep = [k for k in range(state.K) if k != k2]
    relabel = -np.ones(state.K, dtype=np.int64)
    relabel[keep] = np.arange(len(keep))
    if state.n_words:
        state.z_flat[:] = relabel[state.z_flat]
    state.beta = np.concatenate([state.beta[keep], state.beta[-1:]])
    state.pi = np.concatenate([state.pi[:, keep], state.pi[:, -1:]], axis=1)
    state.theta = state.theta[keep]
    state.m = state.m[:, keep]
    state.beta_bar = state.beta_bar[keep]
    state.pi_bar = state.pi_bar[:, keep]
    state.theta_bar = state.theta_bar[keep]
    state.mbar = state.mbar[:, keep]
    state.K -= 1
    state.recount()


# ---------------------------------------------------------------------------
# Driver


def log_joint_proxy(state: HdpState, hyper: HdpHyper) -> float:
    """Collapsed joint of (x, z) given beta: per-document Dirichlet-
    multinomial over topic counts plus per-topic word marginals."""
    alpha = hyper.alpha
    total = 0.0
    sizes = state.doc_sizes()
    total += float((gammaln(alpha) - gammaln(alpha + sizes)).sum())
    ab = alpha * state.beta[: state.K]
    if state.K:
        safe = np.maximum(ab, 1e-300)
        total += float((gammaln(safe[None, :] + state.n) - gammaln(safe[None, :])).sum())
        lam_counts = hyper.lam + state.ckw.astype(float)
        total += float(
            state.K * gammaln(state.V * hyper.lam)
            - gammaln(state.V * hyper.lam + state.ckw.sum(axis=1)).sum()
            + gammaln(lam_counts).sum()
            - state.K * state.V * gammaln(hyper.lam)
        )
    return total


def run_sampler(
    corpus: Corpus,
    hyper: HdpHyper,
    iters: int,
    seed: int,
    k0: int = 1,
    eval_hook=None,
    split_merge: bool = True,
    fixed_k: bool = False,
    init: HdpState | None = None,
    start_iteration: int = 1,
    audit_every: int = 0,
    restart_prob: float = 0.1,
) -> tuple[HdpState, SamplerDiagnostics]:
    """Run the full sampler: restricted sweep, sub-cluster sweep, one split
    proposal per active topic, then merge proposals over a random disjoint
    pairing. Deterministic given (corpus, hyper, seed); per-(iteration,
    document) random streams keep document updates order-independent."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    state = init if init is not None else init_state(corpus, hyper, k0, seed, allow_empty=fixed_k)
    diag = SamplerDiagnostics()
    for it in range(start_iteration, start_iteration + iters):
        doc_rngs = [stable_rng(seed, 1000 + it, j) for j in range(state.D)]
        grng = stable_rng(seed, 1000 + it, _GLOBAL_STREAM)
        sample_beta(state, hyper, grng)
        sample_pi(state, hyper, doc_rngs)
        sample_theta(state, hyper, grng)
        sample_z(state, hyper, doc_rngs, remove_empty=not fixed_k)
        sample_m(state, hyper, doc_rngs)
        sample_subclusters(state, hyper, doc_rngs, grng)

        n_split = n_merge = 0
        if split_merge:
            rejected = []
            for k in range(state.K):
                if propose_split(state, k, hyper, grng):
                    n_split += 1
                else:
                    rejected.append(k)
            # occasionally restart a rejected topic's sub-cluster fit; the
            # anchor reseed lets the bipartition escape local modes
            restart = [k for k in rejected if k < state.K and grng.random() < restart_prob]
            if restart:
                _fresh_subrecords(state, restart, hyper, grng)
            if state.K >= 2:
                perm = grng.permutation(state.K)
                pairs = [(int(perm[2 * i]), int(perm[2 * i + 1])) for i in range(state.K // 2)]
                for k1, k2 in sorted(pairs, key=lambda p: -max(p)):
                    if propose_merge(state, k1, k2, hyper, grng):
                        n_merge += 1
        if audit_every and it % audit_every == 0:
            state.audit(require_nonempty=not fixed_k)
        heldout = eval_hook(state) if eval_hook is not None else None
        diag.append(it, state.K, log_joint_proxy(state, hyper), n_split, n_merge, heldout)
    return state, diag


# ---------------------------------------------------------------------------
# Checkpointing (JSON header + raw binary count arrays) and reporting


def save_checkpoint(state: HdpState, hyper: HdpHyper, path_stem: str, iteration: int, seed: int) -> None:
    arrays = {
        "beta": state.beta,
        "pi": state.pi,
        "theta": state.theta,
        "m": state.m,
        "beta_bar": state.beta_bar,
        "pi_bar": state.pi_bar,
        "theta_bar": state.theta_bar,
        "mbar": state.mbar,
    }
    for j in range(state.D):
        arrays[f"z{j}"] = state.z[j]
        arrays[f"zbar{j}"] = state.zbar[j]
        arrays[f"doc{j}"] = state.docs[j]
    layout = []
    offset = 0
    blob = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        layout.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blob.extend(raw)
        offset += len(raw)
    header = {
        "format_version": 1,
        "vocab_size": state.V,
        "n_docs": state.D,
        "K": state.K,
        "iteration": iteration,
        "seed": seed,
        "hyper": {"gamma": hyper.gamma, "alpha": hyper.alpha, "lambda": hyper.lam},
        "layout": layout,
    }
    with open(f"{path_stem}.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True)
    with open(f"{path_stem}.bin", "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path_stem: str) -> tuple[HdpState, HdpHyper, int, int]:
    with open(f"{path_stem}.json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    with open(f"{path_stem}.bin", "rb") as fh:
        blob = fh.read()
    arrays = {}
    for spec in header["layout"]:
        raw = blob[spec["offset"] : spec["offset"] + spec["nbytes"]]
        arrays[spec["name"]] = np.frombuffer(raw, dtype=spec["dtype"]).reshape(spec["shape"]).copy()
    d = header["n_docs"]
    state = HdpState([arrays[f"doc{j}"] for j in range(d)], header["vocab_size"])
    state.K = header["K"]
    for j in range(d):
        state.z[j][:] = arrays[f"z{j}"]
        state.zbar[j][:] = arrays[f"zbar{j}"]
    for name in ("beta", "pi", "theta", "m", "beta_bar", "pi_bar", "theta_bar", "mbar"):
        setattr(state, name, arrays[name])
    state.recount()
    h = header["hyper"]
    hyper = HdpHyper(gamma=h["gamma"], alpha=h["alpha"], lam=h["lambda"])
    return state, hyper, header["iteration"], header["seed"]


def top_words(state: HdpState, n: int = 10) -> list[list[tuple[int, float]]]:
    """Per-topic top-n words with probabilities."""
    out = []
    for k in range(state.K):
        idx = np.argsort(-state.theta[k])[:n]
        out.append([(int(w), float(state.theta[k, w])) for w in idx])
    return out
