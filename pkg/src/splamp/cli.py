"""Command-line front end: score, table, plan, verify, flops.

Exit codes: 0 success, 2 invalid input, 3 infeasible constraint, 4 failed
verification.  Errors are single lines on stderr.  Output files are written
to a temp file and atomically renamed, so failures never leave partial files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

from .errors import InfeasibleError, InvalidInputError
from .knapsack import BRUTE_FORCE_LIMIT, brute_force_oracle, group_knapsack
from .latency import (
    DEFAULT_SCALE,
    CostModelParams,
    LatencyTable,
    LinearCoeffs,
    UnitRow,
    build_lookup_table,
    eval_latency,
    ingest_lookup_table,
    parse_cost_model,
)
from .model import NetworkSpec, TensorStore, count_flops, load_tensors, parse_network_spec
from .planner import PlannerConfig, build_stage_instance, make_schedule, run_plan
from .scoring import score_table

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFY = 4


def _fail(code: int, message: str) -> int:
    line = " ".join(str(message).split())
    print(f"error: {line}", file=sys.stderr)
    return code


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise InvalidInputError(f"cannot read {path}: {e.strerror}") from e


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise InvalidInputError(f"cannot read {path}: {e.strerror}") from e


def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".splamp-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_spec_store(spec_path: str, weights_path: str) -> tuple[NetworkSpec, TensorStore]:
    spec = parse_network_spec(_read(spec_path))
    store = load_tensors(_read_bytes(weights_path), spec)
    return spec, store


# ---------------------------------------------------------------------------
# table dump format


def table_to_json(table: LatencyTable, params: CostModelParams | None) -> str:
    obj = {
        "scale": table.scale,
        "full_latency": table.full_latency,
        "source": (
            {"kind": "analytic", "params": params.to_json_obj()}
            if params is not None
            else {"kind": "measured"}
        ),
        "units": {
            key: {
                "members": row.members,
                "raw": row.raw,
                "T": row.table,
                "c": row.contributions,
            }
            for key, row in table.units.items()
        },
    }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def table_from_json(text: str) -> tuple[LatencyTable, CostModelParams | None]:
    try:
        doc = json.loads(text)
        units = {}
        for key, row in doc["units"].items():
            units[key] = UnitRow(
                members=list(row["members"]),
                width=len(row["T"]) - 1,
                raw=list(row["raw"]),
                table=[int(v) for v in row["T"]],
                contributions=[int(v) for v in row["c"]],
            )
        table = LatencyTable(
            scale=int(doc["scale"]), full_latency=int(doc["full_latency"]), units=units
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"invalid table dump: {e}") from e
    params = None
    src = doc.get("source", {})
    if src.get("kind") == "analytic":
        p = src["params"]
        params = CostModelParams(
            default=LinearCoeffs(**p["default"]),
            per_layer={k: LinearCoeffs(**v) for k, v in p.get("per_layer", {}).items()},
        )
    for key, row in table.units.items():
        if row.table != [
            row.table[0] + sum(row.contributions[:j]) for j in range(row.width + 1)
        ]:
            raise InvalidInputError(f"invalid table dump: unit {key} fails prefix check")
        if row.table[-1] != table.full_latency:
            raise InvalidInputError(
                f"invalid table dump: unit {key} does not end at full_latency"
            )
    return table, params


def check_table_matches_spec(table: LatencyTable, spec: NetworkSpec) -> None:
    """Reject table dumps built for a different network."""
    covered: set[str] = set()
    for key, row in table.units.items():
        for m in row.members:
            try:
                width = spec.layer(m).out_channels
            except KeyError:
                raise InvalidInputError(
                    f"table does not match the network spec: unknown layer {m!r}"
                ) from None
            if width != row.width:
                raise InvalidInputError(
                    f"table does not match the network spec: unit {key} has width "
                    f"{row.width}, layer {m} has {width} filters"
                )
            covered.add(m)
    missing = [l.id for l in spec.layers if l.id not in covered]
    if missing:
        raise InvalidInputError(
            f"table does not match the network spec: no row covers {missing[0]!r}"
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_score(args) -> int:
    spec, store = _load_spec_store(args.spec, args.weights)
    rows = score_table(spec, store)
    obj = {
        "layers": {
            lid: {
                "scores": [float(s) for s in row.scores],
                "asc_perm": list(row.asc_perm),
                "mandatory": int(row.mandatory),
            }
            for lid, row in rows.items()
        }
    }
    _write_atomic(args.out, json.dumps(obj, indent=2, sort_keys=True) + "\n")
    if not args.quiet:
        print(f"wrote scores for {len(rows)} layers to {args.out}")
    return EXIT_OK


def cmd_table(args) -> int:
    if bool(args.cost_model) == bool(args.measured):
        raise InvalidInputError(
            "ambiguous latency source: give exactly one of --cost-model/--measured"
        )
    spec = parse_network_spec(_read(args.spec))
    if args.cost_model:
        params = parse_cost_model(_read(args.cost_model))
        table = build_lookup_table(spec, params, args.scale)
    else:
        params = None
        table = ingest_lookup_table(_read(args.measured), spec)
    _write_atomic(args.out, table_to_json(table, params))
    if not args.quiet:
        print(
            f"wrote table: {len(table.units)} units, full latency "
            f"{table.full_latency} units (scale {table.scale}) to {args.out}"
        )
    return EXIT_OK


def _resolve_target(args, table: LatencyTable) -> int:
    given = [
        args.target_latency_units is not None,
        args.keep_ratio is not None,
        args.remove_ratio is not None,
    ]
    if sum(given) != 1:
        raise InvalidInputError(
            "give exactly one of --target-latency-units/--keep-ratio/--remove-ratio"
        )
    if args.target_latency_units is not None:
        return args.target_latency_units
    given_ratio = args.keep_ratio if args.keep_ratio is not None else args.remove_ratio
    if not 0.0 <= given_ratio <= 1.0:
        raise InvalidInputError(f"ratio must lie in [0, 1], got {given_ratio}")
    keep = given_ratio if args.keep_ratio is not None else 1.0 - given_ratio
    return int(math.floor(keep * table.full_latency + 0.5))


def cmd_plan(args) -> int:
    spec, store = _load_spec_store(args.spec, args.weights)
    table, params = table_from_json(_read(args.table))
    check_table_matches_spec(table, spec)
    target = _resolve_target(args, table)
    config = PlannerConfig(
        target_latency=target, stages=args.stages, scale=table.scale,
        source="analytic" if params is not None else "measured",
    )
    plan = run_plan(spec, store, table, config, params)
    _write_atomic(args.out, plan.to_json())
    if args.dump_dp:
        _write_atomic(args.dump_dp, _dp_frontier_dump(spec, store, table, plan))
    if not args.quiet:
        final = plan.stages[-1]
        print(
            f"wrote {len(plan.stages)}-stage plan: surrogate {final.surrogate_latency}"
            f"/{plan.full_latency} units to {args.out}"
        )
    return EXIT_OK


def _dp_frontier_dump(spec, store, table, plan) -> str:
    """Debug view: per stage, the reserved budget, chosen groups and frontier.

    The frontier is downsampled to at most 101 budget points to keep dumps
    readable for large capacities.
    """
    survivors = {l.id: list(range(l.out_channels)) for l in spec.layers}
    stages = []
    for rec in plan.stages:
        stage = build_stage_instance(spec, store, table, survivors, rec.capacity)
        sol = group_knapsack(stage.instance)
        frontier = sol.frontier or []
        step = max(1, (len(frontier) - 1) // 100) if frontier else 1
        points = list(range(0, len(frontier), step))
        if frontier and points[-1] != len(frontier) - 1:
            points.append(len(frontier) - 1)
        stages.append(
            {
                "capacity": rec.capacity,
                "dp_budget": stage.instance.capacity,
                "units": stage.unit_keys,
                "chosen_groups": sol.chosen,
                "score": sol.total_score,
                "cost": sol.total_cost,
                "frontier": {str(v): frontier[v] for v in points},
            }
        )
        survivors = rec.masks
    return json.dumps({"stages": stages}, indent=2, sort_keys=True) + "\n"


def cmd_verify(args) -> int:
    spec, store = _load_spec_store(args.spec, args.weights)
    table, params = table_from_json(_read(args.table))
    check_table_matches_spec(table, spec)
    try:
        plan_doc = json.loads(_read(args.plan))
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"invalid plan JSON: {e}") from e
    failures = verify_plan(spec, store, table, params, plan_doc, use_oracle=args.oracle)
    if failures:
        for name, detail in failures:
            print(f"FAIL {name}: {detail}")
        return _fail(EXIT_VERIFY, f"verification failed: {failures[0][0]}")
    if not args.quiet:
        print("all checks passed")
    return EXIT_OK


def verify_plan(
    spec: NetworkSpec,
    store: TensorStore,
    table: LatencyTable,
    params: CostModelParams | None,
    plan_doc: dict,
    use_oracle: bool = False,
) -> list[tuple[str, str]]:
    """Re-check every plan invariant; returns (check, detail) failures."""
    try:
        return _verify_plan_checks(spec, store, table, params, plan_doc, use_oracle)
    except (KeyError, TypeError, IndexError, ValueError) as e:
        return [("format", f"malformed plan document: {e!r}")]


def _verify_plan_checks(
    spec: NetworkSpec,
    store: TensorStore,
    table: LatencyTable,
    params: CostModelParams | None,
    plan_doc: dict,
    use_oracle: bool,
) -> list[tuple[str, str]]:
    failures: list[tuple[str, str]] = []

    def check(name: str, ok: bool, detail: str) -> None:
        if not ok:
            failures.append((name, detail))

    try:
        config = plan_doc["config"]
        stages = plan_doc["stages"]
    except (KeyError, TypeError):
        return [("format", "plan JSON missing config/stages")]

    caps = make_schedule(table.full_latency, config["target_latency"], config["stages"])
    check(
        "schedule",
        [s["capacity"] for s in stages] == caps,
        f"capacities {[s['capacity'] for s in stages]} != schedule {caps}",
    )

    prev_masks = {l.id: list(range(l.out_channels)) for l in spec.layers}
    for i, srec in enumerate(stages, start=1):
        masks = {lid: list(map(int, v)) for lid, v in srec["masks"].items()}
        for l in spec.layers:
            if l.id not in masks:
                return [("format", f"stage {i}: mask missing for {l.id}")]
            check(
                "never-empty-layer",
                len(masks[l.id]) >= 1,
                f"stage {i}: layer {l.id} is emptied",
            )
            check(
                "nesting",
                set(masks[l.id]) <= set(prev_masks[l.id]),
                f"stage {i}: layer {l.id} mask is not nested in the previous stage",
            )
            check(
                "kept-count",
                srec["kept"].get(l.id) == len(masks[l.id]),
                f"stage {i}: kept[{l.id}] disagrees with mask length",
            )
        for key, unit in table.units.items():
            first = masks[unit.members[0]]
            for m in unit.members[1:]:
                check(
                    "coupling",
                    masks[m] == first,
                    f"stage {i}: coupled masks differ in group {key!r}",
                )
        if failures:
            return failures

        kept_units = {
            key: len(masks[unit.members[0]]) for key, unit in table.units.items()
        }
        surrogate = table.surrogate(kept_units)
        check(
            "capacity",
            surrogate <= srec["capacity"],
            f"stage {i}: surrogate {surrogate} exceeds capacity {srec['capacity']}",
        )
        check(
            "surrogate-recompute",
            surrogate == srec["surrogate_latency"],
            f"stage {i}: recorded surrogate {srec['surrogate_latency']} != {surrogate}",
        )

        stage = build_stage_instance(spec, store, table, prev_masks, srec["capacity"])
        solution = group_knapsack(stage.instance)
        achieved = _masks_score(stage, masks, table)
        if achieved is None:
            check("dp-optimality", False, f"stage {i}: masks are not valid group selections")
        else:
            check(
                "dp-optimality",
                math.isclose(achieved, solution.total_score, rel_tol=1e-9, abs_tol=1e-12),
                f"stage {i}: achieved score {achieved} != DP optimum {solution.total_score}",
            )
            check(
                "score-recompute",
                math.isclose(achieved, srec["score"], rel_tol=1e-9, abs_tol=1e-12),
                f"stage {i}: recorded score {srec['score']} != recomputed {achieved}",
            )
            if use_oracle and stage.instance.combo_count() <= BRUTE_FORCE_LIMIT:
                oracle = brute_force_oracle(stage.instance)
                check(
                    "oracle-optimality",
                    oracle.total_score == solution.total_score
                    and oracle.chosen == solution.chosen,
                    f"stage {i}: oracle disagrees with DP",
                )
        if params is not None and srec.get("exact_latency") is not None:
            kept = {lid: len(m) for lid, m in masks.items()}
            exact = eval_latency(spec, kept, params, table.scale)
            check(
                "exact-latency",
                exact == srec["exact_latency"],
                f"stage {i}: recorded exact latency {srec['exact_latency']} != {exact}",
            )
        prev_masks = masks

    final_kept = {lid: len(m) for lid, m in prev_masks.items()}
    check(
        "flops",
        plan_doc["final"]["flops_after"] == count_flops(spec, final_kept)
        and plan_doc["final"]["flops_before"] == count_flops(spec),
        "final FLOPs do not match a recount",
    )
    check(
        "final-masks",
        plan_doc["final"]["masks"] == stages[-1]["masks"],
        "final masks differ from the last stage",
    )
    return failures


def _masks_score(stage, masks: dict[str, list[int]], table: LatencyTable) -> float | None:
    """Total score of recorded masks, folded like the DP; None if not expressible."""
    chosen: list[int] = []
    for key in stage.unit_keys:
        row = stage.group_rows[key]
        unit = table.units[key]
        mask = sorted(masks[unit.members[0]])
        n = len(mask)
        if n < 1 or sorted([row.ranking[0]] + row.members(n - 1)) != mask:
            return None
        chosen.append(n - 1)
    total = 0.0
    for key, c in reversed(list(zip(stage.unit_keys, chosen))):
        if c:
            total = stage.group_rows[key].score_sums[c - 1] + total
    return total


def cmd_flops(args) -> int:
    spec = parse_network_spec(_read(args.spec))
    obj: dict = {"full": count_flops(spec)}
    if args.plan:
        plan_doc = json.loads(_read(args.plan))
        final = {lid: len(m) for lid, m in plan_doc["final"]["masks"].items()}
        obj["final"] = count_flops(spec, final)
        obj["removed_fraction"] = 1.0 - obj["final"] / obj["full"]
    print(json.dumps(obj, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="splamp",
        description="Latency-constrained structured pruning planner",
    )
    ap.add_argument("--scale", type=int, default=DEFAULT_SCALE,
                    help="integer units per millisecond (default 10000)")
    ap.add_argument("--quiet", action="store_true", help="suppress status output")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="dump per-layer filter scores")
    p.add_argument("spec")
    p.add_argument("weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("table", help="build or ingest a latency lookup table")
    p.add_argument("spec")
    p.add_argument("--cost-model", help="linear cost-model JSON")
    p.add_argument("--measured", help="measured per-layer latency JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("plan", help="emit a staged pruning plan")
    p.add_argument("spec")
    p.add_argument("weights")
    p.add_argument("table")
    p.add_argument("--target-latency-units", type=int)
    p.add_argument("--keep-ratio", type=float)
    p.add_argument("--remove-ratio", type=float)
    p.add_argument("--stages", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-dp", help="write per-stage DP debug info to this path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify", help="re-check every invariant of a plan")
    p.add_argument("plan")
    p.add_argument("table")
    p.add_argument("spec")
    p.add_argument("weights")
    p.add_argument("--oracle", action="store_true",
                   help="cross-check stage optimality by exhaustive enumeration")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("flops", help="report multiply-add counts")
    p.add_argument("spec")
    p.add_argument("--plan")
    p.set_defaults(func=cmd_flops)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as e:
        return _fail(EXIT_INFEASIBLE, str(e))
    except InvalidInputError as e:
        return _fail(EXIT_INVALID, str(e))


if __name__ == "__main__":
    sys.exit(main())
