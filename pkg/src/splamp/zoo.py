"""Synthetic network specs and random weight stores for tests and demos."""

from __future__ import annotations

import json

import numpy as np

from .model import NetworkSpec, TensorStore, parse_network_spec


def chain_spec(
    widths: list[int],
    input_channels: int = 3,
    kernel: int = 1,
    spatial: int = 1,
    name: str = "chain",
) -> NetworkSpec:
    """A plain conv chain input -> widths[0] -> widths[1] -> ..."""
    layers = []
    prev = "input"
    for i, w in enumerate(widths):
        lid = f"conv{i + 1}"
        layers.append(
            {
                "id": lid,
                "kind": "conv",
                "out": w,
                "kh": kernel,
                "kw": kernel,
                "out_h": spatial,
                "out_w": spatial,
                "producers": [{"from": prev, "combine": "single"}],
            }
        )
        prev = lid
    doc = {
        "name": name,
        "input": {"channels": input_channels, "h": spatial, "w": spatial},
        "layers": layers,
    }
    return parse_network_spec(json.dumps(doc))


def _conv(lid, out, producers, kh=3, spatial=8, coupling=None):
    obj = {
        "id": lid,
        "kind": "conv",
        "out": out,
        "kh": kh,
        "kw": kh,
        "out_h": spatial,
        "out_w": spatial,
        "producers": producers,
    }
    if coupling:
        obj["coupling"] = coupling
    return obj


def _single(src):
    return [{"from": src, "combine": "single"}]


def _add(*srcs):
    return [{"from": s, "combine": "add"} for s in srcs]


def residual_pair_spec(width: int = 8, spatial: int = 4) -> NetworkSpec:
    """Smallest coupled fixture: stem and one residual block sharing an add."""
    layers = [
        _conv("stem", width, _single("input"), spatial=spatial, coupling="g0"),
        _conv("b1c1", width, _single("stem"), spatial=spatial),
        _conv("b1c2", width, _single("b1c1"), spatial=spatial, coupling="g0"),
        _conv("head", width, _add("stem", "b1c2"), spatial=spatial),
    ]
    doc = {
        "name": "residual-pair",
        "input": {"channels": 3, "h": spatial, "w": spatial},
        "layers": layers,
    }
    return parse_network_spec(json.dumps(doc))


def _residual_net(
    name: str,
    stage_widths: list[int],
    stage_spatials: list[int],
    blocks_per_stage: int,
    input_hw: int,
    num_classes: int,
) -> NetworkSpec:
    """Basic-block residual ladder with flattened skip sums.

    A block's input is the elementwise sum of every earlier output on the
    skip path, so consumers list all of them with combine=add and the layers
    on the path form one coupling group per stage.
    """
    layers = [
        _conv("stem", stage_widths[0], _single("input"), spatial=stage_spatials[0],
              coupling="s1")
    ]
    skip_set = ["stem"]  # layers whose sum is the current block input
    block_no = 0
    for stage, (width, spatial) in enumerate(zip(stage_widths, stage_spatials), start=1):
        group = f"s{stage}"
        for b in range(blocks_per_stage):
            block_no += 1
            c1 = f"b{block_no}c1"
            c2 = f"b{block_no}c2"
            feed = _single(skip_set[0]) if len(skip_set) == 1 else _add(*skip_set)
            layers.append(_conv(c1, width, feed, spatial=spatial))
            layers.append(_conv(c2, width, _single(c1), spatial=spatial, coupling=group))
            if b == 0 and stage > 1:
                # stage boundary: 1x1 downsample projection carries the skip
                ds = f"ds{stage}"
                layers.append(_conv(ds, width, feed, kh=1, spatial=spatial, coupling=group))
                skip_set = [ds, c2]
            else:
                skip_set = skip_set + [c2]
    feed = _single(skip_set[0]) if len(skip_set) == 1 else _add(*skip_set)
    layers.append(
        {
            "id": "fc",
            "kind": "dense",
            "out": num_classes,
            "kh": 1,
            "kw": 1,
            "out_h": 1,
            "out_w": 1,
            "producers": feed,
        }
    )
    doc = {
        "name": name,
        "input": {"channels": 3, "h": input_hw, "w": input_hw},
        "layers": layers,
    }
    return parse_network_spec(json.dumps(doc))


def resnet18_like(spatial: int = 8, num_classes: int = 10) -> NetworkSpec:
    """ResNet18-shaped topology: 4 stages x 2 basic blocks, residual coupling.

    Spatial size is uniform so the analytic cost model prices wide layers
    higher per filter; widths follow the classic 64/128/256/512 ladder.
    """
    return _residual_net(
        name="resnet18-like",
        stage_widths=[64, 128, 256, 512],
        stage_spatials=[spatial] * 4,
        blocks_per_stage=2,
        input_hw=spatial,
        num_classes=num_classes,
    )


def resnet56_like(num_classes: int = 10) -> NetworkSpec:
    """CIFAR-style ResNet-56: 3 stages x 9 blocks x 2 convs, 16/32/64 wide."""
    return _residual_net(
        name="resnet56-like",
        stage_widths=[16, 32, 64],
        stage_spatials=[32, 16, 8],
        blocks_per_stage=9,
        input_hw=32,
        num_classes=num_classes,
    )


def random_store(spec: NetworkSpec, seed: int = 0) -> TensorStore:
    """Standard-normal f32 weights matching the network spec's shapes."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for layer in spec.layers:
        shape = (
            layer.out_channels,
            spec.in_channels[layer.id],
            layer.kernel_h,
            layer.kernel_w,
        )
        tensors[layer.id] = rng.standard_normal(shape).astype(np.float32)
    return TensorStore(tensors)


def spec_to_json(spec: NetworkSpec) -> str:
    """Serialize a NetworkSpec back to its JSON document form."""
    layers = []
    for l in spec.layers:
        obj = {
            "id": l.id,
            "kind": l.kind,
            "out": l.out_channels,
            "kh": l.kernel_h,
            "kw": l.kernel_w,
            "out_h": l.out_h,
            "out_w": l.out_w,
            "producers": [{"from": p.from_id, "combine": p.combine} for p in l.producers],
        }
        if l.coupling_group:
            obj["coupling"] = l.coupling_group
        layers.append(obj)
    doc = {
        "name": spec.name,
        "input": {"channels": spec.input_channels, "h": spec.input_h, "w": spec.input_w},
        "layers": layers,
    }
    return json.dumps(doc, indent=2) + "\n"
