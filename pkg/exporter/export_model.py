#!/usr/bin/env python3
"""Export a trained torch model to the planner's spec/weights file formats.

Walks the traced graph of a model built from Conv2d/Linear layers joined by
elementwise adds and channel concats (ReLU, pooling, flatten and BatchNorm are
passed through transparently), then writes:

  spec.json     -- the layer-graph document consumed by the planner
  weights.splw  -- SPLW binary container of conv/linear weight tensors
  manifest.json -- name mapping, detected residual coupling groups, checksums

Only weight tensors are exported: conv/linear biases and BatchNorm statistics
are ignored, and no BN folding is performed.  Usage:

  export_model.py <checkpoint> <out-dir> [--input-shape C H W]

The checkpoint must be a pickled ``nn.Module`` (``torch.save(model, path)``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import operator
import struct
import sys
from pathlib import Path

import torch
from torch import nn
from torch.fx import symbolic_trace
from torch.fx.passes.shape_prop import ShapeProp

SPLW_MAGIC = b"SPLW"
SPLW_VERSION = 1

_TRANSPARENT_FUNCTIONS = {
    torch.relu,
    torch.nn.functional.relu,
    torch.nn.functional.relu6,
    torch.nn.functional.max_pool2d,
    torch.nn.functional.avg_pool2d,
    torch.nn.functional.adaptive_avg_pool2d,
    torch.flatten,
    torch.nn.functional.dropout,
}
_TRANSPARENT_METHODS = {"relu", "flatten", "view", "reshape", "contiguous", "squeeze"}
_TRANSPARENT_MODULES = (
    nn.ReLU,
    nn.ReLU6,
    nn.MaxPool2d,
    nn.AvgPool2d,
    nn.AdaptiveAvgPool2d,
    nn.Flatten,
    nn.Dropout,
    nn.Identity,
    nn.BatchNorm2d,  # statistics ignored; no folding
    nn.BatchNorm1d,
)


class ExportError(RuntimeError):
    pass


def _sanitize(name: str) -> str:
    return "_".join(filter(None, name.replace(".", "_").replace("/", "_").split("_")))


class _Source:
    """What a graph value carries: the input, one layer, or a combine of layers."""

    def __init__(self, kind: str, ids: list[str]):
        self.kind = kind  # "input" | "layer" | "add" | "concat"
        self.ids = ids

    def producer_list(self) -> list[dict]:
        if self.kind == "input":
            return [{"from": "input", "combine": "single"}]
        if self.kind == "layer":
            return [{"from": self.ids[0], "combine": "single"}]
        combine = "add" if self.kind == "add" else "concat"
        return [{"from": i, "combine": combine} for i in self.ids]


def _node_shape(node) -> tuple[int, ...]:
    meta = node.meta.get("tensor_meta")
    if meta is None:
        raise ExportError(f"shape extraction failure at node {node.name}")
    return tuple(meta.shape)


def export_model(
    model: nn.Module, out_dir: str | Path, input_shape: tuple[int, int, int] = (3, 32, 32)
) -> dict:
    """Walk ``model`` and write spec.json, weights.splw and manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model.eval()
    traced = symbolic_trace(model)
    example = torch.zeros(1, *input_shape)
    ShapeProp(traced).propagate(example)

    modules = dict(traced.named_modules())
    sources: dict[str, _Source] = {}
    layers: list[dict] = []
    layer_map: dict[str, str] = {}
    tensors: dict[str, torch.Tensor] = {}
    group_of: dict[str, str] = {}
    group_members: dict[str, list[str]] = {}
    next_group = 1

    def union(ids: list[str]) -> None:
        nonlocal next_group
        groups = sorted({group_of[i] for i in ids if i in group_of})
        if groups:
            target = groups[0]
        else:
            target = f"g{next_group}"
            next_group += 1
            group_members[target] = []
        for g in groups[1:]:
            for member in group_members.pop(g):
                group_of[member] = target
                group_members[target].append(member)
        for i in ids:
            if group_of.get(i) != target:
                group_of[i] = target
                group_members[target].append(i)

    def source_width(src: _Source) -> int:
        if src.kind == "input":
            return input_shape[0]
        widths = [next(l["out"] for l in layers if l["id"] == i) for i in src.ids]
        return sum(widths) if src.kind == "concat" else widths[0]

    def add_layer(node, module_name: str, src: _Source) -> None:
        mod = modules[module_name]
        lid = _sanitize(module_name)
        shape = _node_shape(node)
        if isinstance(mod, nn.Conv2d):
            if mod.groups != 1:
                raise ExportError(f"unsupported layer kind: grouped conv {module_name}")
            weight = mod.weight.detach()
            kh, kw = mod.kernel_size
            out_h, out_w = int(shape[2]), int(shape[3])
            kind = "conv"
        elif isinstance(mod, nn.Linear):
            weight = mod.weight.detach().reshape(mod.out_features, mod.in_features, 1, 1)
            kh = kw = out_h = out_w = 1
            kind = "dense"
        else:
            raise ExportError(f"unsupported layer kind: {type(mod).__name__} ({module_name})")
        want_in = source_width(src)
        if weight.shape[1] != want_in:
            raise ExportError(
                f"shape extraction failure: {module_name} has in-width {weight.shape[1]}, "
                f"producers supply {want_in}"
            )
        layers.append(
            {
                "id": lid,
                "kind": kind,
                "out": int(weight.shape[0]),
                "kh": int(kh),
                "kw": int(kw),
                "out_h": out_h,
                "out_w": out_w,
                "producers": src.producer_list(),
            }
        )
        layer_map[module_name] = lid
        tensors[lid] = weight.to(torch.float32).contiguous()

    for node in traced.graph.nodes:
        if node.op == "placeholder":
            sources[node.name] = _Source("input", [])
        elif node.op == "call_module":
            mod = modules[node.target]
            src = sources[node.args[0].name]
            if isinstance(mod, _TRANSPARENT_MODULES):
                sources[node.name] = src
            elif isinstance(mod, (nn.Conv2d, nn.Linear)):
                add_layer(node, node.target, src)
                sources[node.name] = _Source("layer", [layer_map[node.target]])
            else:
                raise ExportError(
                    f"unsupported layer kind: {type(mod).__name__} ({node.target})"
                )
        elif node.op == "call_function":
            if node.target in (operator.add, torch.add):
                ids: list[str] = []
                for arg in node.args[:2]:
                    if not hasattr(arg, "name"):
                        raise ExportError(f"unsupported: add with non-tensor operand {arg!r}")
                    src = sources[arg.name]
                    if src.kind == "input":
                        raise ExportError("unsupported: residual add fed by the network input")
                    if src.kind == "concat":
                        raise ExportError("unsupported: add of a concat result")
                    ids.extend(src.ids)
                ids = list(dict.fromkeys(ids))
                union(ids)
                sources[node.name] = _Source("add", ids)
            elif node.target in (torch.cat, torch.concat):
                parts = node.args[0]
                dim = node.args[1] if len(node.args) > 1 else node.kwargs.get("dim", 0)
                if dim != 1:
                    raise ExportError(f"unsupported: concat on dim {dim}")
                ids = []
                for p in parts:
                    src = sources[p.name]
                    if src.kind not in ("layer",):
                        raise ExportError("unsupported: concat of non-layer values")
                    ids.extend(src.ids)
                sources[node.name] = _Source("concat", ids)
            elif node.target in _TRANSPARENT_FUNCTIONS:
                sources[node.name] = sources[node.args[0].name]
            else:
                raise ExportError(f"unsupported layer kind: {getattr(node.target, '__name__', node.target)}")
        elif node.op == "call_method":
            if node.target in _TRANSPARENT_METHODS:
                sources[node.name] = sources[node.args[0].name]
            else:
                raise ExportError(f"unsupported layer kind: method {node.target}")
        elif node.op == "output":
            pass
        else:
            raise ExportError(f"unsupported graph node {node.op}")

    for members in group_members.values():
        if len(members) < 2:
            continue
        for l in layers:
            if l["id"] in members:
                l["coupling"] = group_of[l["id"]]

    spec_doc = {
        "name": type(model).__name__,
        "input": {"channels": input_shape[0], "h": input_shape[1], "w": input_shape[2]},
        "layers": layers,
    }
    spec_text = json.dumps(spec_doc, indent=2, sort_keys=True) + "\n"
    (out_dir / "spec.json").write_text(spec_text)
    blob = _dump_splw(tensors)
    (out_dir / "weights.splw").write_bytes(blob)

    manifest = {
        "source_model": type(model).__name__,
        "input_shape": list(input_shape),
        "layer_map": layer_map,
        "coupling_groups": {
            g: m for g, m in sorted(group_members.items()) if len(m) >= 2
        },
        "files": {"spec": "spec.json", "weights": "weights.splw"},
        "checksums": {
            "spec.json": hashlib.sha256(spec_text.encode()).hexdigest(),
            "weights.splw": hashlib.sha256(blob).hexdigest(),
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return manifest


def _dump_splw(tensors: dict[str, torch.Tensor]) -> bytes:
    out = bytearray()
    out += SPLW_MAGIC
    out += struct.pack("<II", SPLW_VERSION, len(tensors))
    for name, t in tensors.items():
        data = t.to(torch.float32).contiguous().numpy()
        enc = name.encode("utf-8")
        out += struct.pack("<H", len(enc))
        out += enc
        out += struct.pack("<B", 4)
        out += struct.pack("<IIII", *data.shape)
        out += struct.pack("<B", 0)
        out += data.astype("<f4").tobytes()
    return bytes(out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint", help="pickled nn.Module (torch.save(model, path))")
    ap.add_argument("out_dir")
    ap.add_argument("--input-shape", nargs=3, type=int, default=[3, 32, 32],
                    metavar=("C", "H", "W"))
    args = ap.parse_args(argv)
    model = torch.load(args.checkpoint, map_location="cpu", weights_only=False)
    if not isinstance(model, nn.Module):
        print(f"error: checkpoint is not an nn.Module: {type(model).__name__}",
              file=sys.stderr)
        return 2
    try:
        manifest = export_model(model, args.out_dir, tuple(args.input_shape))
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"exported {len(manifest['layer_map'])} layers to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
