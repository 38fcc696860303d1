"""Filter importance scoring and cumulative group construction.

A filter's raw value is its squared Frobenius norm times the summed squared
norms of the input-channel slices it feeds in every consumer; terminal layers
use the filter norm alone.  Values are ranked ascending and each filter is
scored against the tail sum of no-smaller values, so the top filter of every
layer scores exactly 1 and is retained unconditionally (the mandatory filter).

Layers in one coupling group share a single value vector (elementwise sum over
members) and therefore a single score row and kept count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import NetworkSpec, TensorStore


@dataclass
class ScoreRow:
    """Scores for one layer (or coupled unit), aligned with ``indices``.

    indices: original filter indices covered by this row (ascending).
    scores:  score per position, in (0, 1] for positive values.
    asc_perm: positions into ``indices`` in ascending-value order
              (stable; ties resolved by original index).
    mandatory: position of the unique score-1 filter.
    """

    indices: list[int]
    values: np.ndarray
    scores: np.ndarray
    asc_perm: list[int]
    mandatory: int

    @property
    def mandatory_index(self) -> int:
        return self.indices[self.mandatory]

    def ranked_desc(self) -> list[int]:
        """Positions in descending score order (reverse of asc_perm)."""
        return list(reversed(self.asc_perm))


@dataclass
class FilterNorms:
    """Per-layer norm components over the surviving filters."""

    indices: list[int]
    fsn: np.ndarray  # squared Frobenius norm of each filter slice
    csn_next: np.ndarray  # summed consumer input-channel squared norms (zeros if terminal)
    value: np.ndarray  # fsn * csn_next, or fsn for terminal layers; shared within a coupling group


def filter_sq_norms(tensor: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm of each output-filter slice [k, :, :, :]."""
    t = np.asarray(tensor, dtype=np.float64)
    return np.einsum("kijl,kijl->k", t, t)


def channel_sq_norms(tensor: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm of each input-channel slice [:, k, :, :]."""
    t = np.asarray(tensor, dtype=np.float64)
    return np.einsum("ikjl,ikjl->k", t, t)


def _surviving_in_positions(
    spec: NetworkSpec, layer, survivors: dict[str, list[int]]
) -> list[int]:
    """Original input-channel positions of a layer that remain under survivors."""
    positions: list[int] = []
    off = 0
    for p in layer.producers:
        width = spec.producer_width(p.from_id)
        if p.from_id == "input":
            live = range(width)
        else:
            live = survivors[p.from_id]
        if p.combine == "concat":
            positions.extend(off + k for k in live)
            off += width
        else:
            # add/single share one channel block
            block = list(live)
            if not positions:
                positions = block
            elif positions != block:
                raise ValueError(
                    f"layer {layer.id}: add producers keep diverging filter sets"
                )
    return sorted(set(positions))


def compose_values(
    spec: NetworkSpec,
    store: TensorStore,
    survivors: dict[str, list[int]] | None = None,
) -> dict[str, FilterNorms]:
    """Raw importance values per layer, restricted to surviving filters.

    ``survivors`` maps layer id -> sorted original filter indices (full model
    when omitted).  Norms are computed on the pruned tensors: filters restrict
    to surviving input channels, consumer channel slices restrict to the
    consumer's surviving filters.  Coupled layers' value vectors are summed
    elementwise and shared.
    """
    if survivors is None:
        survivors = {l.id: list(range(l.out_channels)) for l in spec.layers}

    rows: dict[str, FilterNorms] = {}
    for layer in spec.layers:
        surv = survivors[layer.id]
        w = np.asarray(store[layer.id], dtype=np.float64)
        in_pos = _surviving_in_positions(spec, layer, survivors)
        sub = w[np.ix_(surv, in_pos)]
        fsn = np.einsum("kijl,kijl->k", sub, sub)

        consumers = spec.consumers(layer.id)
        csn_total = np.zeros(len(surv))
        for cons in consumers:
            wc = np.asarray(store[cons.id], dtype=np.float64)
            rows_c = survivors[cons.id]
            offset = spec.channel_offset(cons, layer.id)
            positions = [offset + k for k in surv]
            if positions and positions[-1] >= wc.shape[1]:
                raise ValueError(
                    f"consumer {cons.id}: channel index {positions[-1]} out of range"
                )
            sub = wc[np.ix_(rows_c, positions)]
            csn_total += np.einsum("rpkl,rpkl->p", sub, sub)
        value = fsn * csn_total if consumers else fsn.copy()
        rows[layer.id] = FilterNorms(
            indices=list(surv), fsn=fsn, csn_next=csn_total, value=value
        )

    for group, members in spec.coupling_units().items():
        if len(members) < 2:
            continue
        base = rows[members[0]]
        for m in members[1:]:
            if rows[m].indices != base.indices:
                raise ValueError(
                    f"coupling group {group!r}: members have diverging survivor sets"
                )
        shared = np.zeros_like(base.value)
        for m in members:
            shared += rows[m].value
        for m in members:
            rows[m].value = shared.copy()
    return rows


def splamp_scores(values: np.ndarray) -> ScoreRow:
    """Tail-normalized scores of a nonnegative value vector.

    With values sorted ascending (stable, ties by original position), the
    score at rank u is value_u / sum of values at ranks >= u, mapped back to
    original positions.  The top-ranked filter scores exactly 1.  If every
    value is zero the highest original position is promoted to score 1 so a
    mandatory filter always exists.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("values must be a nonempty 1-D vector")
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise ValueError("values must be finite and nonnegative")
    n = vals.size
    asc = sorted(range(n), key=lambda k: (vals[k], k))
    tail = 0.0
    tails = np.empty(n)
    for r in range(n - 1, -1, -1):
        tail += vals[asc[r]]
        tails[r] = tail
    scores = np.zeros(n)
    for r, k in enumerate(asc):
        if tails[r] > 0.0:
            scores[k] = vals[k] / tails[r]
    mandatory = asc[-1]
    scores[mandatory] = 1.0  # exact, including the all-zero degenerate case
    return ScoreRow(
        indices=list(range(n)),
        values=vals.copy(),
        scores=scores,
        asc_perm=asc,
        mandatory=mandatory,
    )


def lamp_scores(flat_weights: np.ndarray) -> np.ndarray:
    """Unstructured (per-weight) tail-normalized scores on squared magnitudes."""
    w = np.asarray(flat_weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-D vector")
    row = splamp_scores(w * w)
    return row.scores


def score_layer(
    spec: NetworkSpec,
    store: TensorStore,
    layer_id: str,
    survivors: dict[str, list[int]] | None = None,
) -> ScoreRow:
    """ScoreRow for one layer with original filter indices attached."""
    norms = compose_values(spec, store, survivors)
    return _row_from_norms(norms[layer_id])


def score_table(
    spec: NetworkSpec,
    store: TensorStore,
    survivors: dict[str, list[int]] | None = None,
) -> dict[str, ScoreRow]:
    """ScoreRow per layer; coupled layers share one row object."""
    norms = compose_values(spec, store, survivors)
    table: dict[str, ScoreRow] = {}
    for group, members in spec.coupling_units().items():
        row = _row_from_norms(norms[members[0]])
        for m in members:
            table[m] = row
    return {l.id: table[l.id] for l in spec.layers}


def _row_from_norms(norms: FilterNorms) -> ScoreRow:
    row = splamp_scores(norms.value)
    row.indices = list(norms.indices)
    return row


@dataclass
class GroupRow:
    """Cumulative filter groups of one layer, ready for the knapsack.

    Group i (1-based) holds the i next-best filters after the mandatory one;
    ``score_sums[i-1]`` and ``cost_sums[i-1]`` are its knapsack score/cost.
    Choosing group i keeps i+1 filters.
    """

    ranking: list[int]  # original indices in descending score order; [0] is mandatory
    score_sums: list[float]
    cost_sums: list[int]

    @property
    def group_count(self) -> int:
        return len(self.score_sums)

    def members(self, i: int) -> list[int]:
        """Original indices in group i (1-based)."""
        return self.ranking[1 : i + 1]


def build_groups(row: ScoreRow, contributions: list[int]) -> GroupRow:
    """Nested prefix groups from a score row and positional latency costs.

    ``contributions[j-1]`` is the latency cost of keeping the j-th filter
    position.  Position 1 belongs to the mandatory filter and is reserved
    outside the knapsack, so group i costs positions 2..i+1.
    """
    if len(contributions) != len(row.indices):
        raise ValueError(
            f"length mismatch: {len(row.indices)} scores vs {len(contributions)} contributions"
        )
    ranked = [row.indices[p] for p in row.ranked_desc()]
    desc_scores = [float(row.scores[p]) for p in row.ranked_desc()]
    score_sums: list[float] = []
    cost_sums: list[int] = []
    s = 0.0
    c = 0
    for i in range(1, len(ranked)):
        s += desc_scores[i]
        c += int(contributions[i])
        score_sums.append(s)
        cost_sums.append(c)
    return GroupRow(ranking=ranked, score_sums=score_sums, cost_sums=cost_sums)
