"""Staged pruning plans: score, group, reserve, solve, mask.

Capacities are expressed on the model-latency axis: a configuration's
surrogate latency is the full-model latency minus the contribution mass of
every dropped filter position, so an unpruned plan sits exactly at
full_latency and a stage capacity is directly comparable to it.  Internally
the knapsack budget lives on the raw contribution axis

    sum_l sum_{j<=p_l} c_l^j  <=  capacity - full_latency + total contribution mass

with the mandatory filters' first-position contributions reserved before the
solve.  The two axes differ by a constant, so the selected optimum is the
same; only the reporting anchor changes.

Each stage rescores the surviving filters from the pruned tensors, rebuilds
the nested groups against the (position-indexed, stage-independent) latency
contributions, solves, and shrinks the survivor sets; pruned filters never
return.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import InfeasibleError, InvalidInputError
from .knapsack import Group, KnapsackInstance, KnapsackSolution, group_knapsack
from .latency import CostModelParams, LatencyTable, eval_latency
from .model import NetworkSpec, TensorStore, check_prunable, count_flops
from .scoring import GroupRow, build_groups, score_table


@dataclass(frozen=True)
class PlannerConfig:
    target_latency: int  # integer units, on the model-latency axis
    stages: int
    scale: int
    source: str  # "analytic" | "measured"

    def __post_init__(self):
        if self.stages < 1:
            raise InvalidInputError(f"stages must be >= 1, got {self.stages}")
        if self.target_latency <= 0:
            raise InvalidInputError(
                f"target latency must be positive, got {self.target_latency}"
            )


@dataclass
class StageRecord:
    capacity: int
    kept: dict[str, int]  # per layer id
    masks: dict[str, list[int]]  # per layer id, original filter indices kept
    surrogate_latency: int
    exact_latency: int | None
    score: float


@dataclass
class PruningPlan:
    config: PlannerConfig
    full_latency: int
    stages: list[StageRecord] = field(default_factory=list)
    flops_before: int = 0
    flops_after: int = 0
    exact_before: int | None = None
    exact_after: int | None = None

    @property
    def final_masks(self) -> dict[str, list[int]]:
        return self.stages[-1].masks

    def to_json_obj(self) -> dict:
        return {
            "config": {
                "target_latency": self.config.target_latency,
                "stages": self.config.stages,
                "scale": self.config.scale,
                "source": self.config.source,
            },
            "full_latency": self.full_latency,
            "stages": [
                {
                    "capacity": s.capacity,
                    "kept": {k: s.kept[k] for k in sorted(s.kept)},
                    "masks": {k: s.masks[k] for k in sorted(s.masks)},
                    "surrogate_latency": s.surrogate_latency,
                    "exact_latency": s.exact_latency,
                    "score": s.score,
                }
                for s in self.stages
            ],
            "final": {
                "masks": {k: v for k, v in sorted(self.final_masks.items())},
                "flops_before": self.flops_before,
                "flops_after": self.flops_after,
                "latency_before": self.full_latency,
                "latency_after": self.stages[-1].surrogate_latency,
                "exact_latency_before": self.exact_before,
                "exact_latency_after": self.exact_after,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n"


def make_schedule(full_latency: int, target: int, k: int) -> list[int]:
    """k capacities interpolated from full_latency down to exactly target."""
    if target > full_latency:
        raise InvalidInputError(
            f"target {target} exceeds full latency {full_latency}"
        )
    if k < 1:
        raise InvalidInputError(f"stage count must be >= 1, got {k}")
    span = full_latency - target
    caps = []
    for i in range(1, k + 1):
        drop = -((-span * i) // k)  # ceil; round toward the target
        caps.append(full_latency - drop)
    caps[-1] = target
    return caps


def reserve_mandatory(table: LatencyTable, capacity: int) -> int:
    """Budget left after reserving every unit's first-position contribution.

    ``capacity`` is on the raw contribution axis.  Raises InfeasibleError with
    the floor when even the all-mandatory configuration does not fit (a
    negative capacity is always below the floor, since contributions are
    nonnegative).
    """
    floor = table.mandatory_floor()
    if capacity < floor:
        raise InfeasibleError(f"infeasible: floor={floor}", floor=floor)
    return capacity - floor


def raw_budget(table: LatencyTable, capacity: int) -> int:
    """Translate a model-axis capacity to the raw contribution axis."""
    return capacity - table.full_latency + table.contribution_total()


def normalized_floor(table: LatencyTable) -> int:
    """Lowest achievable surrogate latency (all-mandatory), model axis."""
    return table.surrogate({k: 1 for k in table.units})


@dataclass
class StageInstance:
    """The knapsack instance of one stage plus the bookkeeping to apply it."""

    unit_keys: list[str]
    group_rows: dict[str, GroupRow]
    instance: KnapsackInstance

    def apply(self, solution: KnapsackSolution) -> dict[str, list[int]]:
        """Survivor indices per unit implied by the solution."""
        survivors: dict[str, list[int]] = {}
        for key, choice in zip(self.unit_keys, solution.chosen):
            row = self.group_rows[key]
            keep = [row.ranking[0]] + row.members(choice)
            survivors[key] = sorted(keep)
        return survivors


def build_stage_instance(
    spec: NetworkSpec,
    store: TensorStore,
    table: LatencyTable,
    survivors: dict[str, list[int]],
    capacity: int,
) -> StageInstance:
    """Score survivors, group them, and reserve the mandatory budget."""
    scores = score_table(spec, store, survivors)
    unit_keys = list(table.units.keys())
    group_rows: dict[str, GroupRow] = {}
    layers_groups: list[list[Group]] = []
    for key in unit_keys:
        unit = table.units[key]
        first = unit.members[0]
        row = scores[first]
        n_surv = len(survivors[first])
        contributions = unit.contributions[:n_surv]
        grow = build_groups(row, contributions)
        group_rows[key] = grow
        layers_groups.append(
            [Group(cost=c, score=s) for c, s in zip(grow.cost_sums, grow.score_sums)]
        )
    budget = reserve_mandatory(table, raw_budget(table, capacity))
    return StageInstance(
        unit_keys=unit_keys,
        group_rows=group_rows,
        instance=KnapsackInstance(layers=layers_groups, capacity=budget),
    )


def plan_stage(
    spec: NetworkSpec,
    store: TensorStore,
    table: LatencyTable,
    survivors: dict[str, list[int]],
    capacity: int,
) -> tuple[dict[str, list[int]], KnapsackSolution]:
    """One score->group->solve->mask pass; returns new survivors per layer."""
    stage = build_stage_instance(spec, store, table, survivors, capacity)
    solution = group_knapsack(stage.instance)
    per_unit = stage.apply(solution)
    new_survivors = {}
    for key, unit in table.units.items():
        for m in unit.members:
            new_survivors[m] = list(per_unit[key])
    return new_survivors, solution


def run_plan(
    spec: NetworkSpec,
    store: TensorStore,
    table: LatencyTable,
    config: PlannerConfig,
    params: CostModelParams | None = None,
) -> PruningPlan:
    """Run the full staged schedule and assemble the plan."""
    check_prunable(spec)
    if config.target_latency > table.full_latency:
        raise InvalidInputError(
            f"target latency {config.target_latency} exceeds full latency "
            f"{table.full_latency}"
        )
    floor = normalized_floor(table)
    if config.target_latency < floor:
        raise InfeasibleError(
            f"infeasible: target {config.target_latency} below mandatory floor {floor}",
            floor=floor,
        )
    schedule = make_schedule(table.full_latency, config.target_latency, config.stages)
    plan = PruningPlan(config=config, full_latency=table.full_latency)
    plan.flops_before = count_flops(spec)
    if params is not None:
        plan.exact_before = eval_latency(spec, {}, params, table.scale)

    survivors = {l.id: list(range(l.out_channels)) for l in spec.layers}
    for i, capacity in enumerate(schedule):
        try:
            survivors, solution = plan_stage(spec, store, table, survivors, capacity)
        except InfeasibleError as e:
            raise InfeasibleError(f"stage {i + 1}: {e}", floor=e.floor) from e
        kept = {lid: len(idx) for lid, idx in survivors.items()}
        kept_units = {
            key: len(survivors[unit.members[0]]) for key, unit in table.units.items()
        }
        exact = (
            eval_latency(spec, kept, params, table.scale) if params is not None else None
        )
        plan.stages.append(
            StageRecord(
                capacity=capacity,
                kept=kept,
                masks={lid: list(idx) for lid, idx in survivors.items()},
                surrogate_latency=table.surrogate(kept_units),
                exact_latency=exact,
                score=solution.total_score,
            )
        )
    final_kept = {lid: len(idx) for lid, idx in survivors.items()}
    plan.flops_after = count_flops(spec, final_kept)
    plan.exact_after = plan.stages[-1].exact_latency
    return plan
