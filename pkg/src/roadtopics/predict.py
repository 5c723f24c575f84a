"""Route and destination prediction on a fitted trip HMM: most likely
routes as shortest paths under -log transition weights, absorption
probabilities of destination states, and trip-prefix destination tracking."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .hmm import DEST, HmmModel, _EmissionCache, _state_loglik_matrix, _viterbi_on_matrix
from .trips import Trip, TripArrays


class NoRouteError(RuntimeError):
    pass


class AbsorptionSolveError(RuntimeError):
    pass


@dataclass
class RoutePrediction:
    path: list[int]
    log_prob: float


@dataclass
class AbsorptionTable:
    """a[i, j] is the probability that the chain started at state i is
    eventually absorbed at the j-th destination; ``residual`` is per-state
    mass that is never absorbed (kept explicit instead of renormalizing)."""

    dest_states: np.ndarray  # state indices of the destinations, in order
    a: np.ndarray  # (n_states, n_dest)
    residual: np.ndarray  # (n_states,)

    def prob(self, state: int, dest_state: int) -> float:
        j = int(np.where(self.dest_states == dest_state)[0][0])
        return float(self.a[state, j])

    def check_rows(self, atol: float = 1e-8) -> None:
        sums = self.a.sum(axis=1) + self.residual
        if not np.all(np.abs(sums - 1.0) <= atol):
            raise AssertionError("absorption rows do not sum to 1")
        if self.a.min() < -atol or self.a.max() > 1 + atol:
            raise AssertionError("absorption probabilities outside [0, 1]")


def most_likely_route(model: HmmModel, a: int, b: int) -> RoutePrediction:
    """Maximum-probability state path from a to b: shortest path under edge
    weights -log p(x_j | x_i) >= 0. Ties settle toward lower state indices."""
    k = model.n_states
    if not (0 <= a < k and 0 <= b < k):
        raise ValueError("state index out of range")
    if a == b:
        raise ValueError("route endpoints must differ")
    weights: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(k):
        probs = model.trans_probs[i]
        w = -np.log(probs)
        assert np.all(w >= -1e-12), "transition probability above 1"
        weights.append((model.trans_targets[i], np.maximum(w, 0.0)))

    dist = np.full(k, np.inf)
    pred = np.full(k, -1, dtype=int)
    done = np.zeros(k, dtype=bool)
    dist[a] = 0.0
    heap: list[tuple[float, int]] = [(0.0, a)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == b:
            break
        targets, w = weights[u]
        for v, wv in zip(targets, w):
            if v == u:
                continue
            nd = d + wv
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, int(v)))
    if not np.isfinite(dist[b]):
        raise NoRouteError(f"no route from state {a} to state {b}")
    path = [b]
    while path[-1] != a:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return RoutePrediction(path=path, log_prob=-float(dist[b]))


def _transition_matrix(model: HmmModel) -> np.ndarray:
    k = model.n_states
    p = np.zeros((k, k))
    for i in range(k):
        p[i, model.trans_targets[i]] = model.trans_probs[i]
    return p


def absorption_table(model: HmmModel, tol: float = 1e-10, dense_limit: int = 2000, max_sweeps: int = 100_000) -> AbsorptionTable:
    """Solve a_ij = theta_ij + sum_{k transient} theta_ik a_kj per
    destination j. Destinations are absorbing (a_jj = 1, a_ji = 0).
    Transient states that cannot reach any destination get zero rows with
    residual 1. Uses a direct dense solve below ``dense_limit`` states and
    Gauss-Seidel sweeps to ``tol`` above it."""
    dest = model.dest_states
    if len(dest) == 0:
        raise ValueError("model has no destination states")
    k = model.n_states
    p = _transition_matrix(model)
    is_dest = np.zeros(k, dtype=bool)
    is_dest[dest] = True

    # states that can reach a destination (reverse reachability over edges)
    can_reach = is_dest.copy()
    frontier = list(dest)
    incoming: dict[int, list[int]] = {i: [] for i in range(k)}
    for i in range(k):
        for j in model.trans_targets[i]:
            incoming[int(j)].append(i)
    while frontier:
        v = frontier.pop()
        for u in incoming[v]:
            if not can_reach[u]:
                can_reach[u] = True
                frontier.append(u)

    transient = np.where(~is_dest & can_reach)[0]
    a = np.zeros((k, len(dest)))
    a[dest, np.arange(len(dest))] = 1.0
    if len(transient) > 0:
        q = p[np.ix_(transient, transient)]
        t = p[np.ix_(transient, dest)]
        if len(transient) <= dense_limit:
            sol = scipy.linalg.solve(np.eye(len(transient)) - q, t)
        else:
            sol = np.zeros_like(t)
            for sweep in range(max_sweeps):
                new = t + q @ sol
                if np.max(np.abs(new - sol)) < tol:
                    sol = new
                    break
                sol = new
            else:
                raise AbsorptionSolveError(f"absorption iteration did not converge in {max_sweeps} sweeps")
        a[transient] = np.clip(sol, 0.0, 1.0)
    residual = 1.0 - a.sum(axis=1)
    residual[np.abs(residual) < 1e-12] = 0.0
    table = AbsorptionTable(dest_states=dest, a=a, residual=residual)
    table.check_rows()
    return table


def track_destinations(model: HmmModel, prefix: Trip | TripArrays, table: AbsorptionTable | None = None):
    """Per-timestep distribution over destinations along a trip prefix.

    At each step the prefix is Viterbi-decoded and the current state's
    absorption row (plus residual) is emitted. Returns (decoded states,
    (T, n_dest) probabilities, (T,) residuals)."""
    ta = prefix.arrays() if isinstance(prefix, Trip) else prefix
    if len(ta.t) < 1:
        raise ValueError("prefix must contain at least one observation")
    if table is None:
        table = absorption_table(model)
    cache = _EmissionCache(model)
    loglik = _state_loglik_matrix(model, ta, cache)
    with np.errstate(divide="ignore"):
        log_theta0 = np.log(model.theta0)
    _, _, deltas = _viterbi_on_matrix(loglik, log_theta0, model.dense_log_trans())
    states = []
    for delta in deltas:
        i = int(np.argmax(delta))
        if not np.isfinite(delta[i]):
            raise ValueError("prefix is not decodable under this model")
        states.append(i)
    probs = table.a[states]
    residual = table.residual[states]
    return states, probs, residual


def most_likely_destination_per_road(model: HmmModel, table: AbsorptionTable | None = None) -> dict[int, int]:
    """argmax_j a[i, j] per state (ties to the lowest destination index).
    Destination rows map to themselves."""
    if table is None:
        table = absorption_table(model)
    out: dict[int, int] = {}
    for i in range(model.n_states):
        if model.states[i].kind == DEST:
            out[i] = i
            continue
        out[i] = int(table.dest_states[int(np.argmax(table.a[i]))])
    return out
