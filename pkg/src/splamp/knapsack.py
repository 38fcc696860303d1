"""Group-knapsack solver, exhaustive oracle, and 0-1 baseline.

The group solver picks at most one cumulative filter group per layer to
maximize total score subject to an integer cost budget, using the transfer

    f[l][v] = max( f[l-1][v],  max_i f[l-1][v - cost_{l,i}] + score_{l,i} )

with explicit choice recording so the optimum is recovered exactly.  Ties are
broken deterministically: among equal-score optima prefer lower total cost,
then the lexicographically smallest group-index vector in layer order
(choice 0 meaning "no group").  The oracle enumerates every per-layer choice
under the same order and must agree with the solver exactly.

The 0-1 baseline treats each filter as an independent item with no mandatory
reservation; it may empty a layer and exists only for contrast reporting.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np


@dataclass(frozen=True)
class Group:
    cost: int
    score: float


@dataclass
class KnapsackInstance:
    """Per-layer nested group lists plus the shared integer budget."""

    layers: list[list[Group]]
    capacity: int

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {self.capacity}")
        for li, groups in enumerate(self.layers):
            prev = Group(0, 0.0)
            for gi, g in enumerate(groups):
                if g.cost < 0 or not isinstance(g.cost, (int, np.integer)):
                    raise ValueError(f"layer {li} group {gi}: cost must be a nonnegative int")
                if g.score < 0:
                    raise ValueError(f"layer {li} group {gi}: score must be >= 0")
                if g.cost < prev.cost or g.score < prev.score:
                    raise ValueError(
                        f"layer {li}: groups must have nondecreasing costs and scores"
                    )
                prev = g

    def combo_count(self) -> int:
        n = 1
        for groups in self.layers:
            n *= len(groups) + 1
        return n


@dataclass
class KnapsackSolution:
    """chosen[l] = 0 for no group, i for group i (1-based); kept count = chosen[l] + 1."""

    chosen: list[int]
    total_score: float
    total_cost: int
    frontier: list[float] | None = None  # best score at each budget 0..capacity

    @property
    def kept_counts(self) -> list[int]:
        return [c + 1 for c in self.chosen]


def _fold_totals(instance: KnapsackInstance, chosen: list[int]) -> tuple[float, int]:
    """Score/cost totals, accumulated last layer first to match the DP fold."""
    score = 0.0
    cost = 0
    for groups, c in reversed(list(zip(instance.layers, chosen))):
        if c:
            g = groups[c - 1]
            score = g.score + score
            cost += g.cost
    return score, cost


def group_knapsack(instance: KnapsackInstance) -> KnapsackSolution:
    """Exact DP over suffixes with vectorized per-group relaxation."""
    cap = instance.capacity
    n_layers = len(instance.layers)
    score = np.zeros(cap + 1)
    cost = np.zeros(cap + 1, dtype=np.int64)
    choices: list[np.ndarray] = []
    for groups in reversed(instance.layers):
        s_cur = score.copy()
        c_cur = cost.copy()
        pick = np.zeros(cap + 1, dtype=np.int32)
        for gi, g in enumerate(groups, start=1):
            if g.cost > cap:
                break  # costs nondecreasing, nothing further fits
            cand_s = score[: cap + 1 - g.cost] + g.score
            cand_c = cost[: cap + 1 - g.cost] + g.cost
            view_s = s_cur[g.cost :]
            view_c = c_cur[g.cost :]
            better = (cand_s > view_s) | ((cand_s == view_s) & (cand_c < view_c))
            view_s[better] = cand_s[better]
            view_c[better] = cand_c[better]
            pick[g.cost :][better] = gi
        score, cost = s_cur, c_cur
        choices.append(pick)
    choices.reverse()

    chosen = []
    v = cap
    for l in range(n_layers):
        g = int(choices[l][v])
        chosen.append(g)
        if g:
            v -= instance.layers[l][g - 1].cost
    total_score, total_cost = _fold_totals(instance, chosen)
    return KnapsackSolution(
        chosen=chosen,
        total_score=total_score,
        total_cost=total_cost,
        frontier=score.tolist(),
    )


BRUTE_FORCE_LIMIT = 10**7


def brute_force_oracle(instance: KnapsackInstance) -> KnapsackSolution:
    """Exhaustive enumeration with the solver's exact tie-break order."""
    if instance.combo_count() > BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"instance too large for enumeration: {instance.combo_count()} combinations"
        )
    best: KnapsackSolution | None = None
    ranges = [range(len(groups) + 1) for groups in instance.layers]
    for combo in product(*ranges):
        chosen = list(combo)
        s, c = _fold_totals(instance, chosen)
        if c > instance.capacity:
            continue
        if best is None or s > best.total_score or (
            s == best.total_score and c < best.total_cost
        ):
            best = KnapsackSolution(chosen=chosen, total_score=s, total_cost=c)
    assert best is not None  # the all-none combo is always feasible
    return best


@dataclass
class ZeroOneSolution:
    taken: list[int]  # indices into the item list
    kept_per_layer: dict[str, int]  # may be zero: no mandatory reservation
    total_score: float
    total_cost: int


def zero_one_knapsack(
    items: list[tuple[str, int, float]], capacity: int
) -> ZeroOneSolution:
    """Classic per-filter 0-1 knapsack; items are (layer_id, cost, score)."""
    if capacity < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity}")
    n = len(items)
    score = np.zeros(capacity + 1)
    cost = np.zeros(capacity + 1, dtype=np.int64)
    take = np.zeros((n, capacity + 1), dtype=bool)
    for idx, (_, c_i, s_i) in enumerate(items):
        if c_i < 0 or s_i < 0:
            raise ValueError(f"item {idx}: cost and score must be >= 0")
        if c_i > capacity:
            continue
        cand_s = score[: capacity + 1 - c_i] + s_i
        cand_c = cost[: capacity + 1 - c_i] + c_i
        view_s = score[c_i:]
        view_c = cost[c_i:]
        better = (cand_s > view_s) | ((cand_s == view_s) & (cand_c < view_c))
        new_s = score.copy()
        new_c = cost.copy()
        new_s[c_i:][better] = cand_s[better]
        new_c[c_i:][better] = cand_c[better]
        take[idx, c_i:][better] = True
        score, cost = new_s, new_c

    taken = []
    v = capacity
    for idx in range(n - 1, -1, -1):
        if take[idx, v]:
            taken.append(idx)
            v -= items[idx][1]
    taken.reverse()
    kept: dict[str, int] = {}
    for lid, _, _ in items:
        kept.setdefault(lid, 0)
    total_s = 0.0
    total_c = 0
    for idx in taken:
        lid, c_i, s_i = items[idx]
        kept[lid] += 1
        total_s += s_i
        total_c += c_i
    return ZeroOneSolution(
        taken=taken, kept_per_layer=kept, total_score=total_s, total_cost=total_c
    )
