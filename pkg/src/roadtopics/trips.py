"""Trip data model, trip-log parsing, and synthetic worlds with known
ground truth for oracle-based testing."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Corpus
from .util import stable_rng, wrap_angle

EARTH_RADIUS_M = 6371000.0


class TripSchemaError(ValueError):
    pass


class ReachabilityError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    """One timestamped measurement: planar position (m), heading (rad,
    wrapped to (-pi, pi]), inferred-position flag, and key events."""

    t: float
    x: float
    y: float
    h: float
    q: bool = False
    kon: bool = False
    koff: bool = False

    def __post_init__(self):
        if self.t < 0:
            raise TripSchemaError("negative timestamp")
        if self.kon and self.koff:
            raise TripSchemaError("observation flags both key-on and key-off")
        object.__setattr__(self, "h", float(wrap_angle(self.h)))


@dataclass(frozen=True)
class TripArrays:
    t: np.ndarray
    xy: np.ndarray
    h: np.ndarray
    q: np.ndarray
    kon: np.ndarray
    koff: np.ndarray


@dataclass
class Trip:
    id: str
    obs: list[Observation]

    def validate(self) -> None:
        if len(self.obs) < 2:
            raise TripSchemaError(f"trip {self.id}: needs at least 2 observations")
        ts = [o.t for o in self.obs]
        for a, b in zip(ts, ts[1:]):
            if not b > a:
                raise TripSchemaError(f"trip {self.id}: timestamps not strictly increasing ({a} -> {b})")
        if not self.obs[0].kon:
            raise TripSchemaError(f"trip {self.id}: first observation must be key-on")
        if not self.obs[-1].koff:
            raise TripSchemaError(f"trip {self.id}: last observation must be key-off")
        for o in self.obs[1:]:
            if o.kon:
                raise TripSchemaError(f"trip {self.id}: key-on after trip start")
        for o in self.obs[:-1]:
            if o.koff:
                raise TripSchemaError(f"trip {self.id}: key-off before trip end")

    def arrays(self) -> TripArrays:
        return TripArrays(
            t=np.array([o.t for o in self.obs]),
            xy=np.array([[o.x, o.y] for o in self.obs]),
            h=np.array([o.h for o in self.obs]),
            q=np.array([o.q for o in self.obs], dtype=bool),
            kon=np.array([o.kon for o in self.obs], dtype=bool),
            koff=np.array([o.koff for o in self.obs], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.obs)


def latlon_to_xy(lat, lon, lat0: float, lon0: float) -> tuple[float, float]:
    """Equirectangular projection (meters) about a reference point."""
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return x, y


@dataclass(frozen=True)
class RejectedTrip:
    line: int
    trip_id: str | None
    reason: str


def _obs_from_record(rec: dict, centroid: tuple[float, float] | None) -> Observation:
    if "x" in rec and "y" in rec:
        x, y = float(rec["x"]), float(rec["y"])
    elif "lat" in rec and "lon" in rec:
        if centroid is None:
            raise TripSchemaError("lat/lon observation without any reference centroid")
        x, y = latlon_to_xy(float(rec["lat"]), float(rec["lon"]), *centroid)
    else:
        raise TripSchemaError("observation missing position (x/y or lat/lon)")
    return Observation(
        t=float(rec["t"]),
        x=x,
        y=y,
        h=float(rec["h"]),
        q=bool(rec.get("q", 0)),
        kon=bool(rec.get("kon", 0)),
        koff=bool(rec.get("koff", 0)),
    )


def parse_trips(path) -> tuple[list[Trip], list[RejectedTrip]]:
    """Parse a JSON-Lines trip file.

    Malformed lines and trips violating the data-model invariants are
    rejected (with line number and reason) and parsing continues.
    Observations carrying lat/lon instead of x/y are projected about the
    centroid of all lat/lon points in the file.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()

    # first pass: centroid of any lat/lon observations
    lats, lons = [], []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue
        for o in rec.get("obs", []) if isinstance(rec, dict) else []:
            if isinstance(o, dict) and "lat" in o and "lon" in o:
                lats.append(float(o["lat"]))
                lons.append(float(o["lon"]))
    centroid = (float(np.mean(lats)), float(np.mean(lons))) if lats else None

    trips: list[Trip] = []
    rejects: list[RejectedTrip] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        trip_id = None
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            rejects.append(RejectedTrip(lineno, None, f"invalid JSON: {e}"))
            continue
        try:
            if not isinstance(rec, dict) or "id" not in rec or "obs" not in rec:
                raise TripSchemaError("record must be an object with 'id' and 'obs'")
            trip_id = str(rec["id"])
            obs = [_obs_from_record(o, centroid) for o in rec["obs"]]
            trip = Trip(id=trip_id, obs=obs)
            trip.validate()
        except (TripSchemaError, KeyError, TypeError, ValueError) as e:
            rejects.append(RejectedTrip(lineno, trip_id, f"line {lineno}: {e}"))
            continue
        trips.append(trip)
    return trips, rejects


def serialize_trips(trips: list[Trip], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trip in trips:
            rec = {
                "id": trip.id,
                "obs": [
                    {
                        "t": o.t,
                        "x": o.x,
                        "y": o.y,
                        "h": o.h,
                        "q": int(o.q),
                        "kon": int(o.kon),
                        "koff": int(o.koff),
                    }
                    for o in trip.obs
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Synthetic worlds


@dataclass(frozen=True)
class WorldConfig:
    grid_w: int = 5
    grid_h: int = 5
    spacing: float = 100.0
    n_sources: int = 2
    n_destinations: int = 2
    main_prob: float = 0.8
    pos_std: float = 5.0
    heading_std: float = 0.1
    p_dr: float = 0.1
    dr_inflation: float = 4.0
    vel_std: float = 0.8
    hour_std: float = 0.5
    removed_nodes: tuple[int, ...] = ()


@dataclass(frozen=True)
class RouteChoice:
    route: tuple[int, ...]
    dest: int
    prob: float


@dataclass
class SyntheticWorld:
    """Grid road network with hub-convergent routes.

    Sources sit near the grid center (the hub), destinations far from it,
    and every route runs source -> hub -> destination, so different
    sources share road segments early in the trip. Each source favors one
    destination, which makes the destination distribution depend on the
    source by construction.
    """

    config: WorldConfig
    node_xy: np.ndarray  # (N, 2) meters
    edges: set[tuple[int, int]]
    sources: list[int]
    destinations: list[int]
    route_policy: dict[int, list[RouteChoice]]
    node_velocity: np.ndarray  # planted per-node mean speed (m/s)
    node_hour: np.ndarray  # planted per-node hour-of-day mode

    def dest_marginal(self, source: int) -> dict[int, float]:
        out: dict[int, float] = {}
        for ch in self.route_policy[source]:
            out[ch.dest] = out.get(ch.dest, 0.0) + ch.prob
        return out


def _grid_neighbors(node: int, w: int, h: int):
    r, c = divmod(node, w)
    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w:
            yield rr * w + cc


def bfs_path(edges_out: dict[int, list[int]], start: int, goal: int) -> list[int] | None:
    """Deterministic breadth-first shortest path (neighbors in sorted order)."""
    if start == goal:
        return [start]
    prev = {start: start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in edges_out.get(u, ()):
            if v not in prev:
                prev[v] = u
                if v == goal:
                    path = [v]
                    while path[-1] != start:
                        path.append(prev[path[-1]])
                    return path[::-1]
                queue.append(v)
    return None


def generate_world(config: WorldConfig, seed: int) -> SyntheticWorld:
    """Build a deterministic synthetic world from (config, seed)."""
    w, h = config.grid_w, config.grid_h
    if w < 2 or h < 2:
        raise ValueError("grid must be at least 2x2")
    if config.n_sources < 1 or config.n_destinations < 1:
        raise ValueError("need at least one source and one destination")
    n_nodes = w * h
    removed = set(config.removed_nodes)
    alive = [n for n in range(n_nodes) if n not in removed]
    if config.n_sources + config.n_destinations + 1 > len(alive):
        raise ValueError("not enough nodes for the requested sources/destinations")

    cols = np.arange(n_nodes) % w
    rows = np.arange(n_nodes) // w
    node_xy = np.stack([cols * config.spacing, rows * config.spacing], axis=1).astype(float)

    center = np.array([(w - 1) / 2.0 * config.spacing, (h - 1) / 2.0 * config.spacing])
    dist_center = np.linalg.norm(node_xy - center, axis=1)
    order_near = sorted(alive, key=lambda n: (dist_center[n], n))
    hub = order_near[0]
    candidates = [n for n in order_near if n != hub]
    sources = candidates[: config.n_sources]
    far_candidates = [n for n in sorted(alive, key=lambda n: (-dist_center[n], n)) if n != hub and n not in sources]
    destinations = far_candidates[: config.n_destinations]

    edges: set[tuple[int, int]] = set()
    edges_out: dict[int, list[int]] = {}
    for u in alive:
        nbrs = sorted(v for v in _grid_neighbors(u, w, h) if v not in removed)
        edges_out[u] = nbrs
        for v in nbrs:
            edges.add((u, v))

    rng = stable_rng(seed, 0)
    perm = rng.permutation(config.n_destinations)

    route_policy: dict[int, list[RouteChoice]] = {}
    for si, s in enumerate(sources):
        to_hub = bfs_path(edges_out, s, hub)
        if to_hub is None:
            raise ReachabilityError(f"source node {s} cannot reach the hub")
        choices: list[RouteChoice] = []
        main_dest = destinations[int(perm[si % config.n_destinations])]
        for d in destinations:
            from_hub = bfs_path(edges_out, hub, d)
            if from_hub is None:
                raise ReachabilityError(f"destination node {d} unreachable from the hub")
            route = tuple(to_hub + from_hub[1:])
            if config.n_destinations == 1:
                p = 1.0
            elif d == main_dest:
                p = config.main_prob
            else:
                p = (1.0 - config.main_prob) / (config.n_destinations - 1)
            choices.append(RouteChoice(route=route, dest=d, prob=p))
        total = sum(c.prob for c in choices)
        route_policy[s] = [replace(c, prob=c.prob / total) for c in choices]

    node_velocity = rng.choice([5.0, 15.0, 25.0], size=n_nodes)
    node_hour = rng.choice([8.0, 13.0, 18.0], size=n_nodes)

    return SyntheticWorld(
        config=config,
        node_xy=node_xy,
        edges=edges,
        sources=sources,
        destinations=destinations,
        route_policy=route_policy,
        node_velocity=node_velocity,
        node_hour=node_hour,
    )


@dataclass(frozen=True)
class TripTruth:
    trip_id: str
    nodes: tuple[int, ...]
    source: int
    dest: int


def sample_trips(
    world: SyntheticWorld, n: int, seed: int
) -> tuple[list[Trip], dict[str, dict[str, list[float]]], list[TripTruth]]:
    """Sample ``n`` trips from the world's route policy.

    Returns the trips, the per-trip signal streams (velocity, hour-of-day;
    aligned with observations), and the ground-truth node sequences.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = world.config
    trips: list[Trip] = []
    signals: dict[str, dict[str, list[float]]] = {}
    truths: list[TripTruth] = []
    for i in range(n):
        rng = stable_rng(seed, 1, i)
        s = world.sources[int(rng.integers(len(world.sources)))]
        choices = world.route_policy[s]
        probs = np.array([c.prob for c in choices])
        choice = choices[int(rng.choice(len(choices), p=probs / probs.sum()))]
        route = choice.route
        tid = f"trip-{i:05d}"

        obs: list[Observation] = []
        vels: list[float] = []
        hours: list[float] = []
        trip_hour = float(world.node_hour[s])
        for k, node in enumerate(route):
            nxt = route[k + 1] if k + 1 < len(route) else route[k - 1]
            direction = world.node_xy[nxt] - world.node_xy[node]
            if k + 1 >= len(route):
                direction = -direction
            heading = math.atan2(direction[1], direction[0])
            q = bool(rng.random() < cfg.p_dr)
            std = cfg.pos_std * (cfg.dr_inflation if q else 1.0)
            pos = world.node_xy[node] + rng.normal(0.0, std, size=2) if std > 0 else world.node_xy[node].copy()
            hdg = wrap_angle(heading + (rng.normal(0.0, cfg.heading_std) if cfg.heading_std > 0 else 0.0))
            obs.append(
                Observation(
                    t=float(k),
                    x=float(pos[0]),
                    y=float(pos[1]),
                    h=float(hdg),
                    q=q,
                    kon=(k == 0),
                    koff=(k == len(route) - 1),
                )
            )
            vels.append(float(max(0.0, rng.normal(world.node_velocity[node], cfg.vel_std))))
            hours.append(float((rng.normal(world.node_hour[node], cfg.hour_std)) % 24.0))
        trip = Trip(id=tid, obs=obs)
        trip.validate()
        trips.append(trip)
        signals[tid] = {"velocity": vels, "hour": hours}
        truths.append(TripTruth(trip_id=tid, nodes=route, source=s, dest=choice.dest))
    return trips, signals, truths


# ---------------------------------------------------------------------------
# Synthetic corpora for the topic model


@dataclass
class SyntheticCorpusTruth:
    topics: np.ndarray  # (K_true, V)
    doc_mixtures: np.ndarray  # (D, K_true)
    doc_sizes: np.ndarray  # (D,)

    def __post_init__(self):
        self.topics = np.asarray(self.topics, dtype=float)
        self.doc_mixtures = np.asarray(self.doc_mixtures, dtype=float)
        self.doc_sizes = np.asarray(self.doc_sizes, dtype=np.int64)
        if not np.allclose(self.topics.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("topic rows must sum to 1")
        if not np.allclose(self.doc_mixtures.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("mixture rows must sum to 1")

    @property
    def k_true(self) -> int:
        return self.topics.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.topics.shape[1]


def power_law_doc_sizes(n_docs: int, rng: np.random.Generator, exponent: float = 1.5, min_size: int = 3, max_size: int = 1500) -> np.ndarray:
    """Heavy-tailed document sizes: density ~ x^-exponent above min_size,
    capped at max_size. Mirrors the strong imbalance of per-road
    measurement counts."""
    u = rng.random(n_docs)
    # inverse CDF of a Pareto with shape (exponent - 1)
    sizes = min_size * u ** (-1.0 / (exponent - 1.0))
    return np.minimum(sizes, max_size).astype(np.int64)


def make_corpus_truth(
    n_docs: int,
    vocab_size: int,
    k_true: int,
    seed: int,
    topic_concentration: float = 0.2,
    mixture_concentration: float = 0.4,
    exponent: float = 1.5,
    min_size: int = 3,
    max_size: int = 1500,
) -> SyntheticCorpusTruth:
    """Planted ground truth: block-structured topics (each topic
    concentrates on its own slice of the vocabulary) and sparse
    per-document mixtures with power-law sizes."""
    if vocab_size < max(2, k_true):
        raise ValueError("vocabulary too small")
    rng = stable_rng(seed, 2)
    block = vocab_size // k_true
    topics = np.full((k_true, vocab_size), 1e-3)
    for k in range(k_true):
        lo = k * block
        hi = vocab_size if k == k_true - 1 else (k + 1) * block
        topics[k, lo:hi] += rng.gamma(topic_concentration * 10.0, size=hi - lo) + 0.2
    topics /= topics.sum(axis=1, keepdims=True)
    mixtures = rng.dirichlet(np.full(k_true, mixture_concentration), size=n_docs)
    sizes = power_law_doc_sizes(n_docs, rng, exponent=exponent, min_size=min_size, max_size=max_size)
    return SyntheticCorpusTruth(topics=topics, doc_mixtures=mixtures, doc_sizes=sizes)


def sample_corpus(truth: SyntheticCorpusTruth, seed: int) -> Corpus:
    """Draw each document's words from its mixture of planted topics."""
    if truth.vocab_size < 2:
        raise ValueError("vocabulary size must be >= 2")
    docs = []
    for j in range(len(truth.doc_sizes)):
        rng = stable_rng(seed, 3, j)
        z = rng.choice(truth.k_true, size=int(truth.doc_sizes[j]), p=truth.doc_mixtures[j])
        words = np.empty(len(z), dtype=np.int64)
        for k in np.unique(z):
            mask = z == k
            words[mask] = rng.choice(truth.vocab_size, size=int(mask.sum()), p=truth.topics[k])
        docs.append(words)
    return Corpus(doc_keys=list(range(len(docs))), docs=docs, vocab_size=truth.vocab_size)
