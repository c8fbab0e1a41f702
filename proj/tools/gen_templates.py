#!/usr/bin/env python3
"""Regenerates the JSON architecture templates under templates/.

The templates are data; this script only exists so the long ResNet/MobileNet
layer lists stay reviewable. Slotting:

  resnet50      stem; one slot per bottleneck (conv1 + conv2 width); one slot
                per stage for the shortcut group (every conv3 + downsample).
  mobilenet_v2  stem; one slot per expand conv (its depthwise follows); one
                slot per stage for the block outputs (residual group); last
                1x1 conv.
  mobilenet_v1  stem; one slot per pointwise conv.
  mininet       stem; one slot per bottleneck pointwise conv.

Classifier layers are never prunable.
"""
import json
import os
import sys


class Builder:
    def __init__(self, name, input_shape, baseline=None, description=None):
        self.t = {"schema_version": 1, "name": name, "input_shape": input_shape}
        if description:
            self.t["description"] = description
        if baseline:
            self.t["baseline"] = baseline
        self.t.update({"layers": [], "slots": [], "shortcut_groups": []})
        self.slots = {}

    def layer(self, name, kind, inp, out=None, kernel=1, stride=1, norm=True, relu=True,
              slot=None, residual=None, bias=None):
        l = {"name": name, "kind": kind, "kernel": [kernel, kernel], "stride": stride,
             "padding": kernel // 2, "input": inp}
        if out is not None:
            l["out_channels"] = out
        if kind in ("conv", "pointwise", "depthwise", "dense"):
            l["norm"] = norm
            l["relu"] = relu
        if bias is not None:
            l["bias"] = bias
        if residual:
            l["residual"] = residual
        l["prunable"] = slot is not None
        self.t["layers"].append(l)
        if slot is not None:
            if slot not in self.slots:
                self.slots[slot] = {"name": slot, "layers": []}
                self.t["slots"].append(self.slots[slot])
            self.slots[slot]["layers"].append(name)
        return name

    def group(self, names):
        self.t["shortcut_groups"].append(names)


def resnet50():
    b = Builder("resnet50", [3, 224, 224], {"flops": 4110e6, "params": 25.5e6},
                "ResNet-50 v1.5 (stride on the 3x3 conv), ImageNet head")
    x = b.layer("conv1", "conv", "input", 64, kernel=7, stride=2, slot="stem")
    x = b.layer("pool1", "max_pool", x, kernel=3, stride=2)
    for s, (mid, n, stride) in enumerate([(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)], start=1):
        group = []
        for k in range(1, n + 1):
            p = f"s{s}b{k}"
            st = stride if k == 1 else 1
            block_in = x
            a = b.layer(f"{p}_conv1", "pointwise", block_in, mid, slot=f"{p}_mid")
            a = b.layer(f"{p}_conv2", "conv", a, mid, kernel=3, stride=st, slot=f"{p}_mid")
            if k == 1:
                short = b.layer(f"{p}_down", "pointwise", block_in, mid * 4, stride=st, relu=False,
                                slot=f"s{s}_out")
                group.append(short)
            else:
                short = block_in
            x = b.layer(f"{p}_conv3", "pointwise", a, mid * 4, residual=short, slot=f"s{s}_out")
            group.append(x)
        b.group(group)
    x = b.layer("gap", "global_avg_pool", x)
    b.layer("fc", "dense", x, 1000, norm=False, relu=False)
    return b.t


def mobilenet_v2():
    b = Builder("mobilenet_v2", [3, 224, 224], {"flops": 314e6, "params": 3.5e6},
                "MobileNetV2 1.0, inverted residual blocks, ImageNet head")
    x = b.layer("conv1", "conv", "input", 32, kernel=3, stride=2, slot="stem")
    cin = 32
    setting = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2),
               (6, 320, 1, 1)]
    block = 0
    for s, (t, c, n, stride) in enumerate(setting, start=1):
        group = []
        for k in range(1, n + 1):
            block += 1
            p = f"b{block}"
            st = stride if k == 1 else 1
            block_in = x
            h = block_in
            if t != 1:
                h = b.layer(f"{p}_expand", "pointwise", h, cin * t, slot=f"{p}_expand")
            h = b.layer(f"{p}_dw", "depthwise", h, kernel=3, stride=st)
            res = block_in if (st == 1 and cin == c) else None
            x = b.layer(f"{p}_project", "pointwise", h, c, relu=False, residual=res, slot=f"s{s}_out")
            group.append(x)
            cin = c
        if len(group) > 1:
            b.group(group)
    x = b.layer("conv_last", "pointwise", x, 1280, slot="last")
    x = b.layer("gap", "global_avg_pool", x)
    b.layer("fc", "dense", x, 1000, norm=False, relu=False)
    return b.t


def mobilenet_v1():
    b = Builder("mobilenet_v1", [3, 224, 224], {"flops": 569e6, "params": 4.2e6},
                "MobileNetV1 1.0-224, depthwise separable convolutions, ImageNet head")
    x = b.layer("conv1", "conv", "input", 32, kernel=3, stride=2, slot="stem")
    setting = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2)] + [(512, 1)] * 5 + [(1024, 2), (1024, 1)]
    for i, (c, s) in enumerate(setting, start=1):
        x = b.layer(f"b{i}_dw", "depthwise", x, kernel=3, stride=s)
        x = b.layer(f"b{i}_pw", "pointwise", x, c, slot=f"b{i}")
    x = b.layer("gap", "global_avg_pool", x)
    b.layer("fc", "dense", x, 1000, norm=False, relu=False)
    return b.t


def mininet():
    b = Builder("mininet", [1, 28, 28], None,
                "Desk-scale network: conv block, three depthwise-separable bottlenecks, dense head")
    x = b.layer("stem", "conv", "input", 16, kernel=3, stride=2, slot="stem")
    for i, (c, s) in enumerate([(32, 2), (64, 1), (64, 2)], start=1):
        x = b.layer(f"b{i}_dw", "depthwise", x, kernel=3, stride=s)
        x = b.layer(f"b{i}_pw", "pointwise", x, c, slot=f"b{i}")
    x = b.layer("gap", "global_avg_pool", x)
    b.layer("fc", "dense", x, 10, norm=False, relu=False)
    return b.t


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "templates")
    os.makedirs(out, exist_ok=True)
    for t in (resnet50(), mobilenet_v2(), mobilenet_v1(), mininet()):
        with open(os.path.join(out, t["name"] + ".json"), "w") as f:
            json.dump(t, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    main()
