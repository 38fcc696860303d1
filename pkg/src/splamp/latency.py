"""Latency cost model, per-unit lookup tables and integer contributions.

A table row T[p] is the whole-model latency (integer units) with one prunable
unit held at p kept filters and every other layer full, so passive pruning of
consumers is priced into every entry.  Rows are repaired to a nondecreasing
envelope before first differences are taken, which keeps every per-position
contribution c[j] = T[j] - T[j-1] nonnegative while preserving measured jumps.

The analytic model prices a layer at effective widths (cin, cout) as

    alpha * cin * cout * kh * kw * out_h * out_w
    + beta * cout * out_h * out_w + gamma        [milliseconds]

which matches the observed near-linear dependence of layer latency on channel
counts at a fixed spatial size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import InvalidInputError
from .model import LayerSpec, NetworkSpec, check_prunable, passive_prune_view

INT64_MAX = 2**63 - 1
DEFAULT_SCALE = 10000  # units per millisecond


@dataclass(frozen=True)
class LinearCoeffs:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0


@dataclass
class CostModelParams:
    default: LinearCoeffs
    per_layer: dict[str, LinearCoeffs] = field(default_factory=dict)

    def coeffs(self, layer_id: str) -> LinearCoeffs:
        return self.per_layer.get(layer_id, self.default)

    def to_json_obj(self) -> dict:
        obj = {
            "model": "linear",
            "default": {
                "alpha": self.default.alpha,
                "beta": self.default.beta,
                "gamma": self.default.gamma,
            },
        }
        if self.per_layer:
            obj["per_layer"] = {
                k: {"alpha": c.alpha, "beta": c.beta, "gamma": c.gamma}
                for k, c in sorted(self.per_layer.items())
            }
        return obj


def parse_cost_model(text: str) -> CostModelParams:
    """Parse the linear cost-model JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"invalid cost-model JSON: {e}") from e
    if doc.get("model") != "linear":
        raise InvalidInputError(f"unknown cost model {doc.get('model')!r}")

    def coeffs(obj: dict, where: str) -> LinearCoeffs:
        c = LinearCoeffs(
            alpha=float(obj.get("alpha", 0.0)),
            beta=float(obj.get("beta", 0.0)),
            gamma=float(obj.get("gamma", 0.0)),
        )
        if c.alpha < 0 or c.beta < 0 or c.gamma < 0 or not all(
            math.isfinite(v) for v in (c.alpha, c.beta, c.gamma)
        ):
            raise InvalidInputError(f"cost model {where}: coefficients must be finite and >= 0")
        return c

    params = CostModelParams(default=coeffs(doc.get("default", {}), "default"))
    for lid, obj in doc.get("per_layer", {}).items():
        params.per_layer[lid] = coeffs(obj, lid)
    if all(
        c.alpha == c.beta == c.gamma == 0.0
        for c in [params.default, *params.per_layer.values()]
    ):
        raise InvalidInputError("degenerate cost model: all coefficients zero")
    return params


def layer_cost_ms(params: CostModelParams, layer: LayerSpec, cin: int, cout: int) -> float:
    c = params.coeffs(layer.id)
    area = layer.out_h * layer.out_w
    return (
        c.alpha * cin * cout * layer.kernel_h * layer.kernel_w * area
        + c.beta * cout * area
        + c.gamma
    )


def scale_to_int(latency_ms: float, scale: int) -> int:
    """Integer latency units: round(ms * scale), halves away from zero."""
    if not math.isfinite(latency_ms) or latency_ms < 0:
        raise InvalidInputError(f"latency must be finite and >= 0, got {latency_ms}")
    if scale <= 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    units = math.floor(latency_ms * scale + 0.5)
    if units > INT64_MAX:
        raise InvalidInputError(f"scaled latency {units} overflows the integer range")
    return int(units)


def eval_latency(
    spec: NetworkSpec, kept: dict[str, int], params: CostModelParams, scale: int
) -> int:
    """Whole-model latency of a kept-count configuration, in integer units."""
    view = passive_prune_view(spec, kept)
    total_ms = 0.0
    for layer in spec.layers:
        eff_in, eff_out = view[layer.id]
        total_ms += layer_cost_ms(params, layer, eff_in, eff_out)
    return scale_to_int(total_ms, scale)


def monotone_clamp(values: list[int]) -> list[int]:
    """Minimal nondecreasing envelope that is pointwise >= the input."""
    if not values:
        raise ValueError("monotone_clamp requires a nonempty sequence")
    out = [values[0]]
    for v in values[1:]:
        out.append(max(out[-1], v))
    return out


@dataclass
class UnitRow:
    """Lookup-table row for one prunable unit (coupling group or lone layer)."""

    members: list[str]
    width: int
    raw: list[int]  # pre-clamp integer latencies, retained for reporting
    table: list[int]  # clamped, nondecreasing, table[width] == full_latency
    contributions: list[int]  # contributions[j-1] = table[j] - table[j-1]

    @property
    def total_contribution(self) -> int:
        return self.table[-1] - self.table[0]


@dataclass
class LatencyTable:
    scale: int
    full_latency: int
    units: dict[str, UnitRow]  # keyed by coupling-group name or layer id

    def contribution_total(self) -> int:
        """Sum over units of all positional contributions."""
        return sum(r.total_contribution for r in self.units.values())

    def mandatory_floor(self) -> int:
        """Contribution cost of keeping one filter in every unit."""
        return sum(r.contributions[0] for r in self.units.values())

    def kept_contribution(self, kept_per_unit: dict[str, int]) -> int:
        """Sum of the first kept_per_unit[u] contributions of each unit."""
        total = 0
        for key, row in self.units.items():
            p = kept_per_unit[key]
            if not 0 <= p <= row.width:
                raise ValueError(f"unit {key}: kept count {p} outside [0, {row.width}]")
            total += sum(row.contributions[:p])
        return total

    def surrogate(self, kept_per_unit: dict[str, int]) -> int:
        """Additive latency estimate of a configuration, anchored at the full model.

        full_latency minus the contribution mass of all dropped positions;
        equals full_latency when nothing is pruned.
        """
        return self.full_latency - self.contribution_total() + self.kept_contribution(
            kept_per_unit
        )


def _finish_row(members: list[str], width: int, raw: list[int]) -> UnitRow:
    table = monotone_clamp(raw)
    contributions = [table[j] - table[j - 1] for j in range(1, len(table))]
    return UnitRow(
        members=members, width=width, raw=raw, table=table, contributions=contributions
    )


def build_lookup_table(
    spec: NetworkSpec, params: CostModelParams, scale: int = DEFAULT_SCALE
) -> LatencyTable:
    """Evaluate T[p] for each prunable unit with everything else full."""
    check_prunable(spec)
    full = eval_latency(spec, {}, params, scale)
    units: dict[str, UnitRow] = {}
    for key, members in spec.coupling_units().items():
        width = spec.layer(members[0]).out_channels
        raw = []
        for p in range(width + 1):
            kept = {m: p for m in members}
            raw.append(eval_latency(spec, kept, params, scale))
        units[key] = _finish_row(members, width, raw)
    return LatencyTable(scale=scale, full_latency=full, units=units)


def ingest_lookup_table(text: str, spec: NetworkSpec) -> LatencyTable:
    """Load a measured table: {"scale", "unit", "layers": {id: [T0..Tm]}}.

    Row values are in the named time unit (ms or s) and are scaled to integers
    with the file's own scale, clamped and differenced.  A coupled unit takes
    the row of its first member; rows supplied for other members must match.
    Row ends are normalized to a common full-model latency (the maximum over
    rows) before differencing, folding measurement noise into the topmost
    contribution; raw values are retained unmodified.
    """
    check_prunable(spec)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"invalid table JSON: {e}") from e
    scale = doc.get("scale", DEFAULT_SCALE)
    if not isinstance(scale, int) or scale <= 0:
        raise InvalidInputError(f"table scale must be a positive integer, got {scale!r}")
    unit = doc.get("unit", "ms")
    if unit not in ("ms", "s"):
        raise InvalidInputError(f"unknown time unit {unit!r}")
    rows = doc.get("layers")
    if not isinstance(rows, dict):
        raise InvalidInputError("table JSON missing 'layers'")

    scaled: dict[str, tuple[list[str], int, list[int]]] = {}
    for key, members in spec.coupling_units().items():
        first = members[0]
        if first not in rows:
            raise InvalidInputError(f"missing layer {first}")
        width = spec.layer(first).out_channels
        values = rows[first]
        if not isinstance(values, list) or len(values) != width + 1:
            raise InvalidInputError(
                f"wrong array length for {first}: want {width + 1}, got "
                f"{len(values) if isinstance(values, list) else 'non-array'}"
            )
        for m in members[1:]:
            if m in rows and rows[m] != values:
                raise InvalidInputError(
                    f"coupled rows differ: {m} does not match {first} in group {key!r}"
                )
        ints = []
        for v in values:
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise InvalidInputError(f"non-numeric latency in row {first}: {v!r}")
            if v < 0:
                raise InvalidInputError(f"negative latency in row {first}")
            ints.append(scale_to_int(float(v), scale))
        scaled[key] = (members, width, ints)
    for lid in rows:
        if lid not in {m for mem, _, _ in scaled.values() for m in mem}:
            raise InvalidInputError(f"table row {lid!r} not in spec")

    full = max(monotone_clamp(ints)[-1] for _, _, ints in scaled.values())
    units: dict[str, UnitRow] = {}
    for key, (members, width, ints) in scaled.items():
        row = _finish_row(members, width, ints)
        if row.table[-1] != full:
            deficit = full - row.table[-1]
            row.table[-1] = full
            row.contributions[-1] += deficit
        units[key] = row
    return LatencyTable(scale=scale, full_latency=full, units=units)
