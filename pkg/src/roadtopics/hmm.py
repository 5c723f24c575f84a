"""Trip HMM: source/destination/road-segment states, hard-EM training,
source augmentation, and road-segment corpus extraction."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus
from .quantize import Codebook, _circular_mean_sq, dp_means, assign_many, encode_many
from .trips import Trip, TripArrays
from .util import wrap_angle

SOURCE = "source"
DEST = "dest"
ROAD = "road"

POS_VAR_FLOOR = 1.0  # m^2
HEADING_VAR_FLOOR = 0.01  # rad^2
PQ_FLOOR = 1e-6
COLOCATION_THRESHOLD_M = 30.0


class UndecodableTripError(RuntimeError):
    pass


@dataclass(frozen=True)
class StateId:
    """Hidden-state identity: kind plus the cluster index within that kind.
    Augmented road states additionally carry the trip's source index."""

    kind: str
    idx: int
    src: int | None = None

    def label(self) -> str:
        if self.kind == ROAD and self.src is not None:
            return f"road{self.idx}@src{self.src}"
        return f"{self.kind}{self.idx}"


@dataclass
class EmissionParams:
    mu_r: np.ndarray  # (2,)
    sigma_r: np.ndarray  # (2, 2), SPD
    mu_h: float
    sigma_h: float
    p_q: float
    c: float = 10.0

    def __post_init__(self):
        self.mu_r = np.asarray(self.mu_r, dtype=float)
        self.sigma_r = np.asarray(self.sigma_r, dtype=float)
        self.sigma_r = _floor_spd(self.sigma_r)
        self.sigma_h = max(float(self.sigma_h), HEADING_VAR_FLOOR)
        self.p_q = float(np.clip(self.p_q, PQ_FLOOR, 1 - PQ_FLOOR))
        if not self.c > 1:
            raise ValueError("covariance inflation factor c must be > 1")


def _floor_spd(sigma: np.ndarray, floor: float = POS_VAR_FLOOR) -> np.ndarray:
    sigma = 0.5 * (sigma + sigma.T)
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() < floor:
        vals = np.maximum(vals, floor)
        sigma = (vecs * vals) @ vecs.T
    return sigma


@dataclass
class HmmModel:
    """States, initial distribution, sparse row-stochastic transitions, and
    per-road-segment emission records (tied across source-augmented copies;
    co-located source/destination pairs also share a record)."""

    states: list[StateId]
    theta0: np.ndarray
    trans_targets: list[np.ndarray]
    trans_probs: list[np.ndarray]
    emissions: list[EmissionParams]
    emission_of: np.ndarray
    alpha: float = 0.5
    augmented: bool = False

    @property
    def n_states(self) -> int:
        return len(self.states)

    def kind_indices(self, kind: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.states) if s.kind == kind], dtype=int)

    @property
    def source_states(self) -> np.ndarray:
        return self.kind_indices(SOURCE)

    @property
    def dest_states(self) -> np.ndarray:
        return self.kind_indices(DEST)

    @property
    def road_states(self) -> np.ndarray:
        return self.kind_indices(ROAD)

    def road_clusters(self) -> list[int]:
        return sorted({s.idx for s in self.states if s.kind == ROAD})

    def check_rows(self, atol: float = 1e-9) -> None:
        for i in range(self.n_states):
            total = float(self.trans_probs[i].sum())
            if abs(total - 1.0) > atol:
                raise AssertionError(f"transition row {i} sums to {total}")

    def dense_log_trans(self) -> np.ndarray:
        k = self.n_states
        logt = np.full((k, k), -np.inf)
        for i in range(k):
            logt[i, self.trans_targets[i]] = np.log(self.trans_probs[i])
        return logt

    def to_json_dict(self) -> dict:
        return {
            "format_version": 1,
            "augmented": self.augmented,
            "alpha": self.alpha,
            "states": [{"kind": s.kind, "idx": s.idx, "src": s.src} for s in self.states],
            "theta0": self.theta0.tolist(),
            "trans": [
                [[int(t), float(p)] for t, p in zip(tg, pr)]
                for tg, pr in zip(self.trans_targets, self.trans_probs)
            ],
            "emission_of": self.emission_of.tolist(),
            "emissions": [
                {
                    "mu_r": e.mu_r.tolist(),
                    "sigma_r": e.sigma_r.tolist(),
                    "mu_h": e.mu_h,
                    "sigma_h": e.sigma_h,
                    "p_q": e.p_q,
                    "c": e.c,
                }
                for e in self.emissions
            ],
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "HmmModel":
        states = [StateId(kind=s["kind"], idx=int(s["idx"]), src=s["src"]) for s in obj["states"]]
        trans_targets, trans_probs = [], []
        for row in obj["trans"]:
            trans_targets.append(np.array([t for t, _ in row], dtype=int))
            trans_probs.append(np.array([p for _, p in row], dtype=float))
        return HmmModel(
            states=states,
            theta0=np.asarray(obj["theta0"], dtype=float),
            trans_targets=trans_targets,
            trans_probs=trans_probs,
            emissions=[
                EmissionParams(
                    mu_r=np.asarray(e["mu_r"]),
                    sigma_r=np.asarray(e["sigma_r"]),
                    mu_h=float(e["mu_h"]),
                    sigma_h=float(e["sigma_h"]),
                    p_q=float(e["p_q"]),
                    c=float(e["c"]),
                )
                for e in obj["emissions"]
            ],
            emission_of=np.asarray(obj["emission_of"], dtype=int),
            alpha=float(obj["alpha"]),
            augmented=bool(obj["augmented"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @staticmethod
    def load(path) -> "HmmModel":
        with open(path, "r", encoding="utf-8") as fh:
            return HmmModel.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Emission log-likelihoods


class _EmissionCache:
    """Per-record constants reused across every observation of an E-step."""

    def __init__(self, model: HmmModel):
        e = len(model.emissions)
        self.mu_r = np.stack([p.mu_r for p in model.emissions])
        sig = np.stack([p.sigma_r for p in model.emissions])
        self.c = np.array([p.c for p in model.emissions])
        self.inv0 = np.linalg.inv(sig)
        self.logdet0 = np.linalg.slogdet(sig)[1]
        self.inv1 = self.inv0 / self.c[:, None, None]
        self.logdet1 = self.logdet0 + 2.0 * np.log(self.c)
        self.mu_h = np.array([p.mu_h for p in model.emissions])
        self.sigma_h = np.array([p.sigma_h for p in model.emissions])
        self.log_pq = np.log([p.p_q for p in model.emissions])
        self.log_1mpq = np.log1p(-np.array([p.p_q for p in model.emissions]))
        assert self.inv0.shape == (e, 2, 2)


def _record_loglik(cache: _EmissionCache, ta: TripArrays) -> np.ndarray:
    """(n_records, T) log-density of each observation under each record."""
    diff = ta.xy[None, :, :] - cache.mu_r[:, None, :]  # (E, T, 2)
    q0 = np.einsum("etd,eds,ets->et", diff, cache.inv0, diff)
    q1 = np.einsum("etd,eds,ets->et", diff, cache.inv1, diff)
    ll0 = -np.log(2 * np.pi) - 0.5 * (cache.logdet0[:, None] + q0)
    ll1 = -np.log(2 * np.pi) - 0.5 * (cache.logdet1[:, None] + q1)
    ll_pos = np.where(ta.q[None, :], ll1, ll0)
    hres = wrap_angle(ta.h[None, :] - cache.mu_h[:, None])
    ll_h = -0.5 * np.log(2 * np.pi * cache.sigma_h)[:, None] - hres**2 / (2 * cache.sigma_h[:, None])
    ll_q = np.where(ta.q[None, :], cache.log_pq[:, None], cache.log_1mpq[:, None])
    return ll_pos + ll_h + ll_q


def _state_loglik_matrix(model: HmmModel, ta: TripArrays, cache: _EmissionCache | None = None) -> np.ndarray:
    """(K, T) observation log-likelihood including the degenerate key terms."""
    cache = cache or _EmissionCache(model)
    rec = _record_loglik(cache, ta)
    ll = rec[model.emission_of]
    t = len(ta.t)
    ok = {
        SOURCE: np.where(ta.kon & ~ta.koff, 0.0, -np.inf),
        DEST: np.where(ta.koff & ~ta.kon, 0.0, -np.inf),
        ROAD: np.where(~ta.kon & ~ta.koff, 0.0, -np.inf),
    }
    mask = np.empty((model.n_states, t))
    for i, s in enumerate(model.states):
        mask[i] = ok[s.kind]
    return ll + mask


def obs_loglik(model: HmmModel, state: int, obs) -> float:
    """Log-likelihood of one observation under one state (by state index)."""
    ta = TripArrays(
        t=np.array([obs.t]),
        xy=np.array([[obs.x, obs.y]]),
        h=np.array([obs.h]),
        q=np.array([obs.q], dtype=bool),
        kon=np.array([obs.kon], dtype=bool),
        koff=np.array([obs.koff], dtype=bool),
    )
    return float(_state_loglik_matrix(model, ta)[state, 0])


# ---------------------------------------------------------------------------
# Viterbi decoding


def _viterbi_on_matrix(loglik: np.ndarray, log_theta0: np.ndarray, log_trans: np.ndarray):
    k, t = loglik.shape
    delta = log_theta0 + loglik[:, 0]
    back = np.zeros((t, k), dtype=int)
    deltas = [delta]
    for step in range(1, t):
        cand = delta[:, None] + log_trans
        back[step] = np.argmax(cand, axis=0)
        delta = cand[back[step], np.arange(k)] + loglik[:, step]
        deltas.append(delta)
    end = int(np.argmax(delta))
    if not np.isfinite(delta[end]):
        raise UndecodableTripError("no feasible state sequence (all paths have -inf log-likelihood)")
    path = np.empty(t, dtype=int)
    path[-1] = end
    for step in range(t - 1, 0, -1):
        path[step - 1] = back[step, path[step]]
    return path, float(delta[end]), deltas


def viterbi(model: HmmModel, trip: Trip | TripArrays, cache: _EmissionCache | None = None, log_trans: np.ndarray | None = None):
    """Most likely state sequence and its joint log-likelihood.

    Ties break to the lowest state index at every backtrack step. The key
    indicators force the first state into the sources and the last into the
    destinations.
    """
    ta = trip.arrays() if isinstance(trip, Trip) else trip
    loglik = _state_loglik_matrix(model, ta, cache)
    with np.errstate(divide="ignore"):
        log_theta0 = np.log(model.theta0)
    if log_trans is None:
        log_trans = model.dense_log_trans()
    path, ll, _ = _viterbi_on_matrix(loglik, log_theta0, log_trans)
    return path, ll


# ---------------------------------------------------------------------------
# Initialization


def _estimate_record(xy: np.ndarray, h: np.ndarray, q: np.ndarray, c: float) -> EmissionParams:
    """Exact constrained MLE of one emission record from its observations.
    Dead-reckoned points enter position estimates with weight 1/c."""
    w = np.where(q, 1.0 / c, 1.0)
    mu = (xy * w[:, None]).sum(axis=0) / w.sum()
    d = xy - mu
    s = (d * w[:, None]).T @ d / len(xy)
    mu_h = wrap_angle(_circular_mean_sq(np.asarray(h) % (2 * np.pi), 2 * np.pi))
    hres = wrap_angle(h - mu_h)
    var_h = float((hres**2).mean())
    return EmissionParams(mu_r=mu, sigma_r=s, mu_h=float(mu_h), sigma_h=var_h, p_q=float(q.mean()), c=c)


def _proximity_rows(model_states, emissions, emission_of, scale: float):
    """Dense initial transitions with prob ~ exp(-dist/scale), restricted to
    structurally feasible targets; destinations are absorbing."""
    k = len(model_states)
    mus = np.stack([emissions[emission_of[i]].mu_r for i in range(k)])
    targets, probs = [], []
    for i, s in enumerate(model_states):
        if s.kind == DEST:
            targets.append(np.array([i], dtype=int))
            probs.append(np.array([1.0]))
            continue
        allowed = []
        for j, sj in enumerate(model_states):
            if sj.kind == SOURCE and j != i:
                continue
            if sj.kind == ROAD and sj.src is not None:
                src_i = s.src if s.kind == ROAD else (s.idx if s.kind == SOURCE else None)
                if src_i is not None and sj.src != src_i:
                    continue
            allowed.append(j)
        allowed = np.array(allowed, dtype=int)
        dist = np.linalg.norm(mus[allowed] - mus[i], axis=1)
        wrow = np.exp(-dist / scale)
        wrow = np.maximum(wrow, 1e-300)
        targets.append(allowed)
        probs.append(wrow / wrow.sum())
    return targets, probs


def init_model(
    trips: list[Trip],
    lambda_pos: float = 50.0,
    proximity_scale: float = 200.0,
    augmented: bool = False,
    heading_scale: float = 10.0,
    alpha: float = 0.5,
    c: float = 10.0,
) -> HmmModel:
    """DP-means initialization: road states from (position, heading-embedded)
    features of non-key observations, source/destination states from key-on /
    key-off positions, dense proximity-based transitions, uniform theta0."""
    if not trips:
        raise ValueError("need at least one trip")
    tas = [t.arrays() for t in trips]
    xy = np.concatenate([ta.xy for ta in tas])
    h = np.concatenate([ta.h for ta in tas])
    q = np.concatenate([ta.q for ta in tas])
    kon = np.concatenate([ta.kon for ta in tas])
    koff = np.concatenate([ta.koff for ta in tas])
    road_mask = ~kon & ~koff

    feats = np.column_stack([xy, heading_scale * np.cos(h), heading_scale * np.sin(h)])
    cb_road = dp_means(feats[road_mask], lambda_pos)
    road_labels = assign_many(cb_road, feats[road_mask])
    n_roads = cb_road.k

    cb_src = dp_means(xy[kon], lambda_pos)
    src_labels = assign_many(cb_src, xy[kon])
    cb_dst = dp_means(xy[koff], lambda_pos)
    dst_labels = assign_many(cb_dst, xy[koff])
    n_src, n_dst = cb_src.k, cb_dst.k

    emissions: list[EmissionParams] = []
    for r in range(n_roads):
        m = road_labels == r
        emissions.append(_estimate_record(xy[road_mask][m], h[road_mask][m], q[road_mask][m], c))
    dst_record = []
    for d in range(n_dst):
        m = dst_labels == d
        dst_record.append(len(emissions))
        emissions.append(_estimate_record(xy[koff][m], h[koff][m], q[koff][m], c))
    src_record = []
    for s in range(n_src):
        m = src_labels == s
        # key-on cluster within the co-location threshold of a key-off
        # cluster shares that destination's emission record
        center = xy[kon][m].mean(axis=0)
        d2 = np.linalg.norm(cb_dst.centers - center, axis=1)
        nearest = int(np.argmin(d2))
        if d2[nearest] <= COLOCATION_THRESHOLD_M:
            src_record.append(dst_record[nearest])
        else:
            src_record.append(len(emissions))
            emissions.append(_estimate_record(xy[kon][m], h[kon][m], q[kon][m], c))

    states: list[StateId] = [StateId(SOURCE, s) for s in range(n_src)]
    states += [StateId(DEST, d) for d in range(n_dst)]
    emission_of = src_record + dst_record
    if augmented:
        for r in range(n_roads):
            for s in range(n_src):
                states.append(StateId(ROAD, r, src=s))
                emission_of.append(r)
    else:
        for r in range(n_roads):
            states.append(StateId(ROAD, r))
            emission_of.append(r)
    emission_of = np.array(emission_of, dtype=int)

    targets, probs = _proximity_rows(states, emissions, emission_of, proximity_scale)
    theta0 = np.zeros(len(states))
    theta0[:n_src] = 1.0 / n_src

    return HmmModel(
        states=states,
        theta0=theta0,
        trans_targets=targets,
        trans_probs=probs,
        emissions=emissions,
        emission_of=emission_of,
        alpha=alpha,
        augmented=augmented,
    )


# ---------------------------------------------------------------------------
# Hard EM


def _log_trans_prior(model: HmmModel) -> float:
    total = 0.0
    for i, s in enumerate(model.states):
        if s.kind == DEST:
            continue
        total += float(np.log(model.trans_probs[i]).sum())
    return (model.alpha - 1.0) * total


def _m_step(model: HmmModel, tas: list[TripArrays], paths: list[np.ndarray]) -> HmmModel:
    k = model.n_states
    visits = np.zeros(k, dtype=np.int64)
    for path in paths:
        np.add.at(visits, path, 1)
    keep = np.where(visits > 0)[0]
    remap = -np.ones(k, dtype=int)
    remap[keep] = np.arange(len(keep))
    new_states = [model.states[i] for i in keep]

    # pooled emission statistics per record
    c = model.emissions[0].c if model.emissions else 10.0
    rec_xy: dict[int, list] = {}
    rec_h: dict[int, list] = {}
    rec_q: dict[int, list] = {}
    first_counts = np.zeros(len(keep))
    trans_counts: dict[int, dict[int, int]] = {}
    for ta, path in zip(tas, paths):
        p2 = remap[path]
        first_counts[p2[0]] += 1
        for a, b in zip(p2[:-1], p2[1:]):
            trans_counts.setdefault(int(a), {}).setdefault(int(b), 0)
            trans_counts[int(a)][int(b)] += 1
        for i in range(len(p2)):
            rec = int(model.emission_of[keep[p2[i]]])
            rec_xy.setdefault(rec, []).append(ta.xy[i])
            rec_h.setdefault(rec, []).append(ta.h[i])
            rec_q.setdefault(rec, []).append(ta.q[i])

    clamped = False
    new_emissions = list(model.emissions)
    for rec, pts in rec_xy.items():
        xy = np.asarray(pts)
        h = np.asarray(rec_h[rec])
        qv = np.asarray(rec_q[rec], dtype=bool)
        est = _estimate_record(xy, h, qv, c)
        raw_cov = ((xy - xy.mean(axis=0)).T @ (xy - xy.mean(axis=0))) / len(xy)
        if len(xy) < 2 or np.linalg.eigvalsh(raw_cov).min() < POS_VAR_FLOOR:
            clamped = True
        new_emissions[rec] = est
    if clamped:
        warnings.warn("degenerate emission covariance clamped to floor", RuntimeWarning, stacklevel=2)

    new_targets: list[np.ndarray] = []
    new_probs: list[np.ndarray] = []
    for i, s in enumerate(new_states):
        row = trans_counts.get(i, {})
        if s.kind == DEST or not row:
            new_targets.append(np.array([i], dtype=int))
            new_probs.append(np.array([1.0]))
            continue
        tg = np.array(sorted(row), dtype=int)
        cnt = np.array([row[t] for t in tg], dtype=float)
        wrow = np.maximum(0.0, cnt + model.alpha - 1.0)
        if wrow.sum() <= 0:
            new_targets.append(np.array([i], dtype=int))
            new_probs.append(np.array([1.0]))
            continue
        new_targets.append(tg)
        new_probs.append(wrow / wrow.sum())

    theta0 = first_counts / first_counts.sum()

    return HmmModel(
        states=new_states,
        theta0=theta0,
        trans_targets=new_targets,
        trans_probs=new_probs,
        emissions=new_emissions,
        emission_of=model.emission_of[keep],
        alpha=model.alpha,
        augmented=model.augmented,
    )


def em_fit(model: HmmModel, trips: list[Trip], max_iter: int = 50, tol: float = 1e-6):
    """Hard (Viterbi) EM. Each iteration decodes every trip with the current
    parameters, then re-estimates emissions (pooled across tied states),
    sparse MAP transitions, and theta0 from the assignments. States that
    received no observations are pruned. Returns the fitted model and the
    per-iteration objective trace (joint log-likelihood plus the log
    transition prior over stored entries)."""
    trace: list[float] = []
    tas = [t.arrays() for t in trips]

    def decode_all(m: HmmModel):
        cache = _EmissionCache(m)
        log_trans = m.dense_log_trans()
        paths, total = [], 0.0
        for ta in tas:
            path, ll = viterbi(m, ta, cache, log_trans)
            paths.append(path)
            total += ll
        return paths, total

    paths, _ = decode_all(model)
    for _ in range(max_iter):
        model = _m_step(model, tas, paths)
        paths, total = decode_all(model)
        trace.append(total + _log_trans_prior(model))
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    model.check_rows()
    return model, trace


def augment_with_source(model: HmmModel, trips: list[Trip]) -> HmmModel:
    """Lift a fitted plain model onto the source-augmented state space
    X_S u X_D u (X_R x X_S). Emission records stay per-road; transitions
    and theta0 are re-counted from each trip's decoded path under its
    decoded source."""
    if model.augmented:
        raise ValueError("model is already augmented")
    cache = _EmissionCache(model)
    log_trans = model.dense_log_trans()

    src_ids = [s.idx for s in model.states if s.kind == SOURCE]
    dst_ids = [s.idx for s in model.states if s.kind == DEST]
    road_ids = [s.idx for s in model.states if s.kind == ROAD]
    src_pos = {idx: i for i, idx in enumerate(src_ids)}

    states: list[StateId] = [StateId(SOURCE, i) for i in src_ids]
    states += [StateId(DEST, i) for i in dst_ids]
    emission_of = [model.emission_of[np.where([st.kind == SOURCE and st.idx == i for st in model.states])[0][0]] for i in src_ids]
    emission_of += [model.emission_of[np.where([st.kind == DEST and st.idx == i for st in model.states])[0][0]] for i in dst_ids]
    road_record = {}
    for i, st in enumerate(model.states):
        if st.kind == ROAD:
            road_record[st.idx] = int(model.emission_of[i])
    aug_index: dict[tuple[int, int], int] = {}
    for r in road_ids:
        for s in src_ids:
            aug_index[(r, s)] = len(states)
            states.append(StateId(ROAD, r, src=s))
            emission_of.append(road_record[r])

    def map_state(plain_idx: int, trip_src: int) -> int:
        st = model.states[plain_idx]
        if st.kind == SOURCE:
            return src_pos[st.idx]
        if st.kind == DEST:
            return len(src_ids) + dst_ids.index(st.idx)
        return aug_index[(st.idx, trip_src)]

    k = len(states)
    trans_counts: dict[int, dict[int, int]] = {}
    first_counts = np.zeros(k)
    for trip in trips:
        path, _ = viterbi(model, trip, cache, log_trans)
        trip_src = model.states[path[0]].idx
        mapped = [map_state(int(p), trip_src) for p in path]
        first_counts[mapped[0]] += 1
        for a, b in zip(mapped[:-1], mapped[1:]):
            trans_counts.setdefault(a, {}).setdefault(b, 0)
            trans_counts[a][b] += 1

    targets, probs = [], []
    for i, st in enumerate(states):
        row = trans_counts.get(i, {})
        if st.kind == DEST or not row:
            targets.append(np.array([i], dtype=int))
            probs.append(np.array([1.0]))
            continue
        tg = np.array(sorted(row), dtype=int)
        cnt = np.array([row[t] for t in tg], dtype=float)
        wrow = np.maximum(0.0, cnt + model.alpha - 1.0)
        if wrow.sum() <= 0:
            targets.append(np.array([i], dtype=int))
            probs.append(np.array([1.0]))
            continue
        targets.append(tg)
        probs.append(wrow / wrow.sum())
    theta0 = first_counts / first_counts.sum()

    return HmmModel(
        states=states,
        theta0=theta0,
        trans_targets=targets,
        trans_probs=probs,
        emissions=model.emissions,
        emission_of=np.asarray(emission_of, dtype=int),
        alpha=model.alpha,
        augmented=True,
    )


def extract_corpus(
    model: HmmModel,
    trips: list[Trip],
    cb_v: Codebook,
    cb_t: Codebook,
    signals: dict[str, dict[str, list[float]]],
) -> Corpus:
    """Assign each trip's observations to road segments by Viterbi decoding
    and collect the encoded (velocity, hour) words per road-segment document.
    Source-augmented states collapse onto their road segment."""
    cache = _EmissionCache(model)
    log_trans = model.dense_log_trans()
    vocab = cb_v.k * cb_t.k
    road_ids = model.road_clusters()
    docs: dict[int, list[int]] = {r: [] for r in road_ids}
    for trip in trips:
        if trip.id not in signals:
            raise ValueError(f"no signal stream for trip {trip.id}")
        stream = signals[trip.id]
        vel = np.asarray(stream["velocity"], dtype=float)
        hour = np.asarray(stream["hour"], dtype=float)
        if len(vel) != len(trip.obs) or len(hour) != len(trip.obs):
            raise ValueError(f"signal stream misaligned with observations for trip {trip.id}")
        path, _ = viterbi(model, trip, cache, log_trans)
        words = encode_many(cb_v, cb_t, vel, hour)
        for i, state_idx in enumerate(path):
            st = model.states[state_idx]
            if st.kind == ROAD:
                docs[st.idx].append(int(words[i]))
    return Corpus(
        doc_keys=road_ids,
        docs=[np.asarray(docs[r], dtype=np.int64) for r in road_ids],
        vocab_size=vocab,
    )
