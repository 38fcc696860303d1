"""Network graph spec, weight container, passive-pruning propagation and FLOPs.

The graph is a DAG of conv/dense layers. Each layer lists its producers
together with a combine mode:

  * ``single`` -- exactly one producer; in-channels = producer out-channels.
  * ``add``    -- elementwise sum; all producers must have equal out-channels.
  * ``concat`` -- channel concatenation; in-channels = sum of producer widths.

Dense layers are modelled as 1x1 convs on a 1x1 spatial grid.  In-channels are
always derived from producers, never stored.  Layers sharing a
``coupling_group`` feed the same elementwise add and must keep identical
filter sets under any pruning plan.

Weight containers use the SPLW binary format (little-endian):

  magic ``SPLW`` | version u32=1 | tensor_count u32 | per tensor:
  name_len u16 | name utf-8 | rank u8=4 | dims 4*u32 [out,in,kh,kw] |
  dtype u8=0 (f32) | payload row-major f32
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

SPLW_MAGIC = b"SPLW"
SPLW_VERSION = 1

_COMBINES = ("single", "add", "concat")
_KINDS = ("conv", "dense")


@dataclass(frozen=True)
class Producer:
    from_id: str  # layer id or "input"
    combine: str


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    out_channels: int
    kernel_h: int
    kernel_w: int
    out_h: int
    out_w: int
    producers: tuple[Producer, ...]
    coupling_group: str | None = None


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_channels: int
    input_h: int
    input_w: int
    layers: tuple[LayerSpec, ...]  # topological order
    in_channels: dict[str, int] = field(default_factory=dict, compare=False)

    def layer(self, layer_id: str) -> LayerSpec:
        return self._by_id[layer_id]

    @property
    def _by_id(self) -> dict[str, LayerSpec]:
        d = getattr(self, "_by_id_cache", None)
        if d is None:
            d = {l.id: l for l in self.layers}
            object.__setattr__(self, "_by_id_cache", d)
        return d

    def consumers(self, layer_id: str) -> list[LayerSpec]:
        """Layers that read this layer's output, in topological order."""
        return [
            l for l in self.layers if any(p.from_id == layer_id for p in l.producers)
        ]

    def channel_offset(self, consumer: LayerSpec, producer_id: str) -> int:
        """Input-channel offset of ``producer_id`` inside ``consumer``'s weight.

        Nonzero only under concat, where earlier producers occupy the leading
        channel positions.  Offsets are in the original (unpruned) layout.
        """
        off = 0
        for p in consumer.producers:
            if p.from_id == producer_id:
                return off
            if p.combine == "concat":
                off += self.producer_width(p.from_id)
        raise KeyError(f"{producer_id} is not a producer of {consumer.id}")

    def producer_width(self, from_id: str) -> int:
        if from_id == "input":
            return self.input_channels
        return self.layer(from_id).out_channels

    def coupling_units(self) -> dict[str, list[str]]:
        """Prunable units: coupling-group name (or layer id) -> member layer ids.

        Ordered by the first member's topological position.
        """
        units: dict[str, list[str]] = {}
        for layer in self.layers:
            key = layer.coupling_group or layer.id
            units.setdefault(key, []).append(layer.id)
        return units

    def unit_of(self, layer_id: str) -> str:
        layer = self.layer(layer_id)
        return layer.coupling_group or layer.id


def _positive_int(obj: dict, key: str, layer_id: str) -> int:
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
        raise InvalidInputError(f"layer {layer_id}: non-positive dimension {key!r}")
    return v


def parse_network_spec(text: str) -> NetworkSpec:
    """Parse and validate the NetworkSpec JSON document.

    Layers may appear in any order; a stable topological sort is applied.
    Raises InvalidInputError on cycles, unknown producers, add-combine channel
    mismatches, non-positive dimensions, or coupling-width mismatches.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"invalid spec JSON: {e}") from e
    if not isinstance(doc, dict) or "layers" not in doc or "input" not in doc:
        raise InvalidInputError("spec JSON must have 'name', 'input' and 'layers'")

    inp = doc["input"]
    for k in ("channels", "h", "w"):
        if not isinstance(inp.get(k), int) or inp[k] <= 0:
            raise InvalidInputError(f"input: non-positive dimension {k!r}")

    raw_layers: list[LayerSpec] = []
    seen: set[str] = set()
    for obj in doc["layers"]:
        lid = obj.get("id")
        if not isinstance(lid, str) or not lid:
            raise InvalidInputError("layer with missing or empty id")
        if lid == "input":
            raise InvalidInputError("layer id 'input' is reserved")
        if lid in seen:
            raise InvalidInputError(f"duplicate layer id {lid!r}")
        seen.add(lid)
        kind = obj.get("kind")
        if kind not in _KINDS:
            raise InvalidInputError(f"layer {lid}: unknown kind {kind!r}")
        prods = obj.get("producers")
        if not isinstance(prods, list) or not prods:
            raise InvalidInputError(f"layer {lid}: at least one producer required")
        producers = []
        combines = set()
        for p in prods:
            c = p.get("combine", "single")
            if c not in _COMBINES:
                raise InvalidInputError(f"layer {lid}: unknown combine {c!r}")
            combines.add(c)
            producers.append(Producer(from_id=p["from"], combine=c))
        if len(combines) > 1:
            raise InvalidInputError(f"layer {lid}: mixed combine modes")
        if "single" in combines and len(producers) > 1:
            raise InvalidInputError(f"layer {lid}: 'single' combine with >1 producer")
        layer = LayerSpec(
            id=lid,
            kind=kind,
            out_channels=_positive_int(obj, "out", lid),
            kernel_h=_positive_int(obj, "kh", lid),
            kernel_w=_positive_int(obj, "kw", lid),
            out_h=_positive_int(obj, "out_h", lid),
            out_w=_positive_int(obj, "out_w", lid),
            producers=tuple(producers),
            coupling_group=obj.get("coupling"),
        )
        if layer.kind == "dense" and (
            layer.kernel_h != 1 or layer.kernel_w != 1 or layer.out_h != 1 or layer.out_w != 1
        ):
            raise InvalidInputError(f"layer {lid}: dense layers require kh=kw=out_h=out_w=1")
        raw_layers.append(layer)

    ordered = _topo_sort(raw_layers)
    spec = NetworkSpec(
        name=doc.get("name", ""),
        input_channels=inp["channels"],
        input_h=inp["h"],
        input_w=inp["w"],
        layers=tuple(ordered),
    )
    _derive_in_channels(spec)
    _check_coupling_widths(spec)
    return spec


def _topo_sort(layers: list[LayerSpec]) -> list[LayerSpec]:
    ids = {l.id for l in layers}
    for l in layers:
        for p in l.producers:
            if p.from_id != "input" and p.from_id not in ids:
                raise InvalidInputError(f"layer {l.id}: unknown producer id {p.from_id!r}")
    remaining = list(layers)
    placed: set[str] = set()
    ordered: list[LayerSpec] = []
    while remaining:
        progress = False
        still = []
        for l in remaining:
            if all(p.from_id == "input" or p.from_id in placed for p in l.producers):
                ordered.append(l)
                placed.add(l.id)
                progress = True
            else:
                still.append(l)
        remaining = still
        if not progress:
            stuck = ", ".join(l.id for l in remaining)
            raise InvalidInputError(f"cycle detected among layers: {stuck}")
    return ordered


def _derive_in_channels(spec: NetworkSpec) -> None:
    for layer in spec.layers:
        widths = [spec.producer_width(p.from_id) for p in layer.producers]
        combine = layer.producers[0].combine
        if combine == "concat":
            cin = sum(widths)
        else:
            if combine == "add" and len(set(widths)) > 1:
                raise InvalidInputError(
                    f"layer {layer.id}: add-combine channel mismatch {widths}"
                )
            cin = widths[0]
        spec.in_channels[layer.id] = cin


def _check_coupling_widths(spec: NetworkSpec) -> None:
    for group, members in spec.coupling_units().items():
        if len(members) < 2:
            continue
        widths = {spec.layer(m).out_channels for m in members}
        if len(widths) > 1:
            raise InvalidInputError(
                f"coupling group {group!r}: members have unequal out_channels {sorted(widths)}"
            )


# ---------------------------------------------------------------------------
# SPLW weight container


@dataclass
class TensorStore:
    tensors: dict[str, np.ndarray]

    def __getitem__(self, layer_id: str) -> np.ndarray:
        return self.tensors[layer_id]

    def __contains__(self, layer_id: str) -> bool:
        return layer_id in self.tensors


def load_tensors(data: bytes, spec: NetworkSpec) -> TensorStore:
    """Decode an SPLW container and validate it against the network spec.

    Every spec layer must have a tensor of shape
    [out_channels, in_channels, kernel_h, kernel_w] with finite f32 values.
    """
    if len(data) < 12 or data[:4] != SPLW_MAGIC:
        raise InvalidInputError("bad magic: not an SPLW container")
    version, count = struct.unpack_from("<II", data, 4)
    if version != SPLW_VERSION:
        raise InvalidInputError(f"unsupported SPLW version {version}")
    off = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            rank = data[off]
            off += 1
            if rank != 4:
                raise InvalidInputError(f"tensor {name}: rank {rank} != 4")
            dims = struct.unpack_from("<IIII", data, off)
            off += 16
            dtype = data[off]
            off += 1
            if dtype != 0:
                raise InvalidInputError(f"tensor {name}: unsupported dtype {dtype}")
            n = dims[0] * dims[1] * dims[2] * dims[3]
            payload = np.frombuffer(data, dtype="<f4", count=n, offset=off)
            off += 4 * n
        except (struct.error, IndexError, ValueError) as e:
            raise InvalidInputError(f"truncated SPLW container: {e}") from e
        arr = payload.reshape(dims).astype(np.float32)
        bad = np.flatnonzero(~np.isfinite(arr.ravel()))
        if bad.size:
            raise InvalidInputError(
                f"non-finite value in tensor {name} at flat index {int(bad[0])}"
            )
        tensors[name] = arr
    for layer in spec.layers:
        if layer.id not in tensors:
            raise InvalidInputError(f"missing tensor {layer.id}")
        want = (
            layer.out_channels,
            spec.in_channels[layer.id],
            layer.kernel_h,
            layer.kernel_w,
        )
        got = tensors[layer.id].shape
        if got != want:
            raise InvalidInputError(
                f"tensor {layer.id}: shape mismatch, spec wants {want}, container has {got}"
            )
    return TensorStore(tensors)


def dump_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    """Encode named 4-D f32 tensors as an SPLW container."""
    out = bytearray()
    out += SPLW_MAGIC
    out += struct.pack("<II", SPLW_VERSION, len(tensors))
    for name, arr in tensors.items():
        if arr.ndim != 4:
            raise ValueError(f"tensor {name}: expected rank 4, got {arr.ndim}")
        enc = name.encode("utf-8")
        out += struct.pack("<H", len(enc))
        out += enc
        out += struct.pack("<B", 4)
        out += struct.pack("<IIII", *arr.shape)
        out += struct.pack("<B", 0)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


# ---------------------------------------------------------------------------
# Passive pruning and FLOPs


def passive_prune_view(
    spec: NetworkSpec, kept: dict[str, int]
) -> dict[str, tuple[int, int]]:
    """Effective (in, out) widths per layer under the kept-count map.

    ``kept`` maps layer id -> kept filter count; absent layers stay full.
    Coupling-group members must carry equal counts.  Consumers inherit widths
    passively: concat sums, add/single share the producer width.
    """
    eff_out: dict[str, int] = {}
    for layer in spec.layers:
        k = kept.get(layer.id, layer.out_channels)
        if not 0 <= k <= layer.out_channels:
            raise InvalidInputError(
                f"layer {layer.id}: kept count {k} outside [0, {layer.out_channels}]"
            )
        eff_out[layer.id] = k
    for group, members in spec.coupling_units().items():
        counts = {eff_out[m] for m in members}
        if len(counts) > 1:
            raise InvalidInputError(
                f"coupling group {group!r}: unequal kept counts {sorted(counts)}"
            )

    view: dict[str, tuple[int, int]] = {}
    for layer in spec.layers:
        widths = [
            spec.input_channels if p.from_id == "input" else eff_out[p.from_id]
            for p in layer.producers
        ]
        combine = layer.producers[0].combine
        if combine == "concat":
            eff_in = sum(widths)
        else:
            if combine == "add" and len(set(widths)) > 1:
                raise InvalidInputError(
                    f"layer {layer.id}: add producers have unequal kept widths {widths}"
                )
            eff_in = widths[0]
        view[layer.id] = (eff_in, eff_out[layer.id])
    return view


def check_prunable(spec: NetworkSpec) -> None:
    """Reject graphs whose add joins cannot survive per-unit pruning.

    Every elementwise add forces its producers to keep identical filter sets,
    so all of them must sit in one coupling group, and none of them can be the
    raw input (which is never pruned).  Such graphs are still valid for
    scoring and FLOPs counting, just not for latency planning.
    """
    for layer in spec.layers:
        if layer.producers[0].combine != "add" or len(layer.producers) < 2:
            continue
        froms = [p.from_id for p in layer.producers]
        if "input" in froms:
            raise InvalidInputError(
                f"layer {layer.id}: add joins the network input, whose width is "
                "fixed; this graph cannot be pruned"
            )
        units = {spec.unit_of(f) for f in froms}
        if len(units) > 1:
            raise InvalidInputError(
                f"layer {layer.id}: add producers {froms} span coupling units "
                f"{sorted(units)}; declare one coupling group over all of them"
            )


def count_flops(spec: NetworkSpec, kept: dict[str, int] | None = None) -> int:
    """Multiply-add count under the kept map (full model by default)."""
    view = passive_prune_view(spec, kept or {})
    total = 0
    for layer in spec.layers:
        eff_in, eff_out = view[layer.id]
        total += eff_in * eff_out * layer.kernel_h * layer.kernel_w * layer.out_h * layer.out_w
    return total
