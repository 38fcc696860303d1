"""Latency-constrained structured pruning planner.

Scores filters by layer-adaptive magnitude importance, prices per-filter
latency from lookup tables or an analytic linear cost model, and selects the
filters to keep with a group-knapsack dynamic program over a staged schedule.
"""

from .errors import InfeasibleError, InvalidInputError, SplampError
from .knapsack import (
    Group,
    KnapsackInstance,
    KnapsackSolution,
    brute_force_oracle,
    group_knapsack,
    zero_one_knapsack,
)
from .latency import (
    CostModelParams,
    LatencyTable,
    LinearCoeffs,
    build_lookup_table,
    eval_latency,
    ingest_lookup_table,
    monotone_clamp,
    parse_cost_model,
    scale_to_int,
)
from .model import (
    LayerSpec,
    NetworkSpec,
    TensorStore,
    count_flops,
    dump_tensors,
    load_tensors,
    parse_network_spec,
    passive_prune_view,
)
from .planner import (
    PlannerConfig,
    PruningPlan,
    make_schedule,
    plan_stage,
    reserve_mandatory,
    run_plan,
)
from .scoring import (
    build_groups,
    channel_sq_norms,
    compose_values,
    filter_sq_norms,
    lamp_scores,
    score_table,
    splamp_scores,
)

__version__ = "0.1.0"
