"""Train-set subsampling under the eight non-proxy strategies.

Every sampler returns exactly ``budget(percent, len(train))`` interactions.
Strategies that pick whole users or graph nodes truncate the last unit
they add; the random-walk and forest-fire samplers trim their overshoot
uniformly at random.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import Dataset
from .graph import BipartiteGraph, build_graph, pagerank
from .utils import budget as _budget, scaled_count

INTERACTION_STRATEGIES = ("random-interaction", "stratified", "temporal")
USER_STRATEGIES = ("random-user", "head-user")
GRAPH_STRATEGIES = ("centrality", "random-walk", "forest-fire")
BASELINE_STRATEGIES = INTERACTION_STRATEGIES + USER_STRATEGIES + GRAPH_STRATEGIES

DEFAULT_PARAMS = {
    "damping": 0.85,
    "tol": 1e-8,
    "max_iter": 100,
    "restart": 0.15,
    "stall_steps": 1000,
    "burn": 0.7,
}


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSpec:
    percent: float
    strategy: str
    seed: int = 0
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < float(self.percent) <= 100:
            raise SamplingError(f"percent must lie in (0, 100], got {self.percent}")

    def param(self, name: str):
        return self.params.get(name, DEFAULT_PARAMS[name])

    def budget(self, n: int) -> int:
        return _budget(self.percent, n)


@dataclass(frozen=True, eq=False)
class SampleResult:
    retained: Dataset
    strategy: str
    seed: int
    budget: int
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.retained)


def _result(train: Dataset, spec: SampleSpec, keep: np.ndarray, n_budget: int,
            **extra) -> SampleResult:
    keep = np.unique(np.asarray(keep, dtype=np.int64))
    if len(keep) != n_budget:
        raise AssertionError(f"{spec.strategy}: kept {len(keep)} of budget {n_budget}")
    prov = {"strategy": spec.strategy, "percent": spec.percent, "seed": spec.seed,
            "budget": n_budget, "train_size": len(train), **extra}
    return SampleResult(train.subset(keep), spec.strategy, spec.seed, n_budget, prov)


def _checked_budget(train: Dataset, spec: SampleSpec) -> int:
    b = spec.budget(len(train))
    if b > len(train):
        raise SamplingError(f"budget {b} exceeds train size {len(train)}")
    return b


def fill_units(units, n_budget: int, rng: np.random.Generator) -> np.ndarray:
    """Concatenate ``units`` (arrays of positions) until ``n_budget`` is met.

    The unit that crosses the budget contributes a uniformly random subset
    of just the positions still needed.
    """
    taken, total = [], 0
    for unit in units:
        need = n_budget - total
        if need <= 0:
            break
        unit = np.asarray(unit, dtype=np.int64)
        if len(unit) > need:
            unit = rng.choice(unit, size=need, replace=False)
        taken.append(unit)
        total += len(unit)
    if total < n_budget:
        raise SamplingError(f"ran out of units at {total} of {n_budget}")
    return np.concatenate(taken) if taken else np.empty(0, dtype=np.int64)


# --------------------------------------------------------------------------
# Interaction sampling


def sample_random_interactions(train: Dataset, spec: SampleSpec) -> SampleResult:
    b = _checked_budget(train, spec)
    rng = np.random.default_rng(spec.seed)
    return _result(train, spec, rng.choice(len(train), size=b, replace=False), b)


def adjust_counts(k: np.ndarray, caps: np.ndarray, target: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Nudge per-user counts ``k`` by single units until they sum to ``target``.

    Additions go to users below their cap, removals to users holding at
    least two, each round touching distinct users so most users move by at
    most one.  Only when every retained user is down to a single
    interaction are whole users dropped.
    """
    k = k.copy()
    diff = int(target - k.sum())
    while diff > 0:
        eligible = np.flatnonzero(k < caps)
        if len(eligible) == 0:
            raise SamplingError("cannot reach budget: every history exhausted")
        pick = rng.choice(eligible, size=min(diff, len(eligible)), replace=False)
        k[pick] += 1
        diff -= len(pick)
    while diff < 0:
        eligible = np.flatnonzero(k > 1)
        if len(eligible) == 0:
            eligible = np.flatnonzero(k > 0)
        pick = rng.choice(eligible, size=min(-diff, len(eligible)), replace=False)
        k[pick] -= 1
        diff += len(pick)
    return k


def _per_user_sample(train: Dataset, spec: SampleSpec, *, recent: bool) -> SampleResult:
    b = _checked_budget(train, spec)
    rng = np.random.default_rng(spec.seed)
    counts = train.user_counts()
    initial = np.array([scaled_count(spec.percent, int(n)) for n in counts], dtype=np.int64)
    final = adjust_counts(initial, counts, b, rng)
    keep = []
    for u in np.flatnonzero(final):
        hist = train.user_history(u)
        if recent:
            keep.append(hist[len(hist) - final[u]:])
        else:
            # a fixed random order per user makes "keep the first k" equal to
            # a uniform draw, whatever k the adjustment settles on
            keep.append(rng.permutation(hist)[:final[u]])
    return _result(train, spec, np.concatenate(keep), b,
                   adjusted_users=int(np.count_nonzero(final != initial)))


def sample_stratified_user_history(train: Dataset, spec: SampleSpec) -> SampleResult:
    return _per_user_sample(train, spec, recent=False)


def sample_temporal_user_history(train: Dataset, spec: SampleSpec) -> SampleResult:
    return _per_user_sample(train, spec, recent=True)


# --------------------------------------------------------------------------
# User sampling


def sample_random_users(train: Dataset, spec: SampleSpec) -> SampleResult:
    b = _checked_budget(train, spec)
    rng = np.random.default_rng(spec.seed)
    active = np.flatnonzero(train.user_counts())
    order = rng.permutation(active)
    return _result(train, spec, fill_units((train.user_history(u) for u in order), b, rng), b)


def sample_head_users(train: Dataset, spec: SampleSpec) -> SampleResult:
    """Keep the heaviest users; same as repeatedly deleting the lightest one."""
    b = _checked_budget(train, spec)
    rng = np.random.default_rng(spec.seed)
    counts = train.user_counts()
    order = np.lexsort((np.arange(len(counts)), -counts))
    order = order[counts[order] > 0]
    return _result(train, spec, fill_units((train.user_history(u) for u in order), b, rng), b)


# --------------------------------------------------------------------------
# Graph sampling


def _node_interactions(train: Dataset):
    by_item = np.argsort(train.items, kind="stable")
    item_ptr = np.zeros(train.num_items + 1, dtype=np.int64)
    np.cumsum(train.item_counts(), out=item_ptr[1:])
    nu = train.num_users

    def of(node: int) -> np.ndarray:
        if node < nu:
            return train.user_history(node)
        i = node - nu
        return by_item[item_ptr[i]:item_ptr[i + 1]]

    return of


def sample_centrality(train: Dataset, graph: BipartiteGraph | None, spec: SampleSpec) -> SampleResult:
    b = _checked_budget(train, spec)
    graph = graph or build_graph(train)
    rng = np.random.default_rng(spec.seed)
    pr = pagerank(graph, spec.param("damping"), spec.param("tol"), int(spec.param("max_iter")))
    order = np.lexsort((np.arange(graph.num_nodes), -pr.scores))
    of = _node_interactions(train)
    taken = np.zeros(len(train), dtype=bool)

    def units():
        for node in order:
            fresh = of(node)
            fresh = fresh[~taken[fresh]]
            taken[fresh] = True
            yield fresh

    keep = fill_units(units(), b, rng)
    return _result(train, spec, keep, b, pagerank_converged=pr.converged,
                   pagerank_iterations=pr.iterations)


class _Uniforms:
    """Buffered scalar draws from a Generator."""

    def __init__(self, rng: np.random.Generator, size: int = 4096):
        self.rng, self.size = rng, size
        self.buf, self.pos = rng.random(size), 0

    def __call__(self) -> float:
        if self.pos == self.size:
            self.buf, self.pos = self.rng.random(self.size), 0
        self.pos += 1
        return self.buf[self.pos - 1]


class _InducedEdges:
    """Tracks the interactions induced by a growing set of visited nodes."""

    def __init__(self, graph: BipartiteGraph):
        self.graph = graph
        self.visited = np.zeros(graph.num_nodes, dtype=bool)
        self.edges: list[int] = []
        self.count = 0

    def visit(self, node: int) -> bool:
        if self.visited[node]:
            return False
        self.visited[node] = True
        g = self.graph
        lo, hi = g.adj_indptr[node], g.adj_indptr[node + 1]
        hit = self.visited[g.adj_nodes[lo:hi]]
        if hit.any():
            new = g.adj_edges[lo:hi][hit]
            self.edges.extend(new.tolist())
            self.count += int(g.multiplicity[new].sum())
        return True

    def unvisited_active(self) -> np.ndarray:
        return np.flatnonzero(~self.visited & (self.graph.degree() > 0))

    def trimmed(self, n_budget: int, rng: np.random.Generator) -> np.ndarray:
        members = self.graph.edges_members(self.edges)
        if len(members) > n_budget:
            members = rng.choice(members, size=n_budget, replace=False)
        return members


def sample_random_walk(train: Dataset, graph: BipartiteGraph | None, spec: SampleSpec) -> SampleResult:
    """Random walks with restart; keeps every edge between visited nodes.

    A walk jumps to a fresh unvisited start node when its connected
    component is exhausted or after ``stall_steps`` steps without reaching
    a new node.
    """
    b = _checked_budget(train, spec)
    graph = graph or build_graph(train)
    rng = np.random.default_rng(spec.seed)
    uni = _Uniforms(rng)
    restart, stall_limit = spec.param("restart"), int(spec.param("stall_steps"))
    comp = graph.components
    comp_size = np.bincount(comp)
    comp_seen = np.zeros_like(comp_size)
    state = _InducedEdges(graph)

    def visit(node):
        if state.visit(node):
            comp_seen[comp[node]] += 1
            return True
        return False

    start = cur = None
    stall = starts = steps = 0
    while state.count < b:
        if start is None or stall >= stall_limit or comp_seen[comp[start]] == comp_size[comp[start]]:
            fresh = state.unvisited_active()
            start = cur = int(fresh[int(uni() * len(fresh))])
            visit(start)
            stall, starts = 0, starts + 1
            continue
        steps += 1
        if uni() < restart:
            cur = start
        else:
            lo, hi = graph.adj_indptr[cur], graph.adj_indptr[cur + 1]
            cur = int(graph.adj_nodes[lo + int(uni() * (hi - lo))])
        stall = 0 if visit(cur) else stall + 1
    return _result(train, spec, state.trimmed(b, rng), b, walks=starts, steps=steps,
                   visited_nodes=int(state.visited.sum()))


def sample_forest_fire(train: Dataset, graph: BipartiteGraph | None, spec: SampleSpec) -> SampleResult:
    """Forest-fire sampling; keeps every edge between burned nodes.

    Each newly burned node ignites ``Geometric`` many (mean
    ``burn / (1 - burn)``) of its unburned neighbours.  When the fire dies
    out a new one starts at a random unburned node.
    """
    b = _checked_budget(train, spec)
    graph = graph or build_graph(train)
    rng = np.random.default_rng(spec.seed)
    burn = spec.param("burn")
    if not 0 <= burn < 1:
        raise SamplingError("burn probability must lie in [0, 1)")
    state = _InducedEdges(graph)
    front: deque[int] = deque()
    fires = 0
    while state.count < b:
        if not front:
            fresh = state.unvisited_active()
            node = int(rng.choice(fresh))
            state.visit(node)
            front.append(node)
            fires += 1
            continue
        node = front.popleft()
        nbrs = graph.neighbours(node)
        nbrs = nbrs[~state.visited[nbrs]]
        n_burn = min(int(rng.geometric(1.0 - burn)) - 1, len(nbrs))
        if n_burn <= 0:
            continue
        for w in rng.choice(nbrs, size=n_burn, replace=False):
            state.visit(int(w))
            front.append(int(w))
            if state.count >= b:
                break
    return _result(train, spec, state.trimmed(b, rng), b, fires=fires,
                   burned_nodes=int(state.visited.sum()))


_PLAIN = {
    "random-interaction": sample_random_interactions,
    "stratified": sample_stratified_user_history,
    "temporal": sample_temporal_user_history,
    "random-user": sample_random_users,
    "head-user": sample_head_users,
}
_GRAPH = {
    "centrality": sample_centrality,
    "random-walk": sample_random_walk,
    "forest-fire": sample_forest_fire,
}


def sample(train: Dataset, spec: SampleSpec, graph: BipartiteGraph | None = None) -> SampleResult:
    """Dispatch ``spec.strategy`` to one of the baseline samplers."""
    if spec.strategy in _PLAIN:
        return _PLAIN[spec.strategy](train, spec)
    if spec.strategy in _GRAPH:
        return _GRAPH[spec.strategy](train, graph, spec)
    raise SamplingError(f"unknown sampling strategy {spec.strategy!r}")
