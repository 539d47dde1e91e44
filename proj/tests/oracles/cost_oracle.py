#!/usr/bin/env python3
"""Hand-audited FLOP oracle for small network configs.

Rebuilds the layer grid with plain loops (no shared code with the C++
builder) and prints the node and classifier cost tables in the same CSV
layout as `msdnet build --format csv`.

usage: cost_oracle.py config.json > config.costs.csv
"""
import json
import sys


def half_up(n):
    return (n + 1) // 2


def conv(k, cin, cout, h, w, stride, pad):
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    # conv MACs x2, then BN (4/elem) and ReLU (1/elem)
    return 2 * k * k * cin * cout * ho * wo + 5 * cout * ho * wo, ho, wo


def main(path):
    net = json.load(open(path))["network"]
    S = net["num_scales"] if net.get("multi_scale", True) else 1
    L = net["num_layers"]
    k = net["growth_rates"]
    mult = net.get("seed_multiplier", 2)
    classes = net["num_classes"]
    cin0, H, W = net["input_shape"]
    width = net.get("classifier_channels", 128)
    factor = net.get("bottleneck_factor", 4)
    dense = net.get("dense_connectivity", True)
    star = net.get("densenet_star", False)
    reduction = net.get("reduction", True)

    p = net["classifier_placement"]
    if not net.get("intermediate_classifiers", True):
        heads = [L]
    elif p["kind"] == "anytime":
        heads = [2 * (i + 1) for i in range(1, L) if 2 * (i + 1) <= L]
    elif p["kind"] == "budgeted":
        heads, t, i = [], 0, 0
        while True:
            i += 1
            t += i
            if t > L or (p.get("count", 0) and i > p["count"]):
                break
            heads.append(t)
    else:
        heads = list(p["layers"])
    if heads[-1] != L:
        heads.append(L)

    nblocks = S if reduction else 1
    sizes = [L // nblocks] * nblocks
    for r in range(L % nblocks):
        sizes[nblocks - 1 - r] += 1
    block_of = {}
    layer = 0
    for b, n in enumerate(sizes, start=1):
        for _ in range(n):
            layer += 1
            block_of[layer] = b

    # node: [kind, layer, scale, flops, inputs, channels, h, w]
    nodes = []

    def add(kind, layer, scale, flops, inputs, ch, h, w):
        nodes.append([kind, layer, scale, flops, inputs, ch, h, w])
        return len(nodes) - 1

    def bottleneck(kind, layer, scale, src, out):
        _, _, _, _, _, c, h, w = nodes[src]
        inner = min(c, factor * out)
        f1, h1, w1 = conv(1, c, inner, h, w, 1, 0)
        f2, h2, w2 = conv(3, inner, out, h1, w1, 2 if kind == "h~-transform" else 1, 1)
        return add(kind, layer, scale, f1 + f2, [src], out, h2, w2)

    def head(layer, src):
        _, _, _, _, _, c, h, w = nodes[src]
        f1, h1, w1 = conv(3, c, width, h, w, 2, 1)
        f2, h2, w2 = conv(3, width, width, h1, w1, 2, 1)
        ph, pw = (2, 2) if h2 >= 2 and w2 >= 2 else (h2, w2)
        oh, ow = h2 // ph, w2 // pw
        pool = width * oh * ow * ph * pw
        lin = 2 * width * oh * ow * classes
        return add("classifier-head", layer, S, f1 + f2 + pool + lin, [src], classes, 1, 1)

    def grow(s, b):
        return k[s - 1] * (2 ** (b - 1) if star else 1)

    state = {}
    x = add("input", 0, 1, 0, [], cin0, H, W)
    for s in range(1, S + 1):
        src = x if s == 1 else state[(1, s - 1)]
        c = nodes[src][5]
        h, w = nodes[src][6], nodes[src][7]
        out = mult * grow(s, 1)
        f, ho, wo = conv(3, c, out, h, w, 1 if s == 1 else 2, 1)
        state[(1, s)] = add("seed-conv", 1, s, f, [src], out, ho, wo)
    if 1 in heads:
        head(1, state[(1, S)])

    cur = {s: state[(1, s)] for s in range(1, S + 1)}
    carried = None

    def transition(layer):
        lo = block_of[layer] if reduction else 1
        dropped = cur[lo]
        for s in range(lo + 1, S + 1):
            c, h, w = nodes[cur[s]][5], nodes[cur[s]][6], nodes[cur[s]][7]
            f, _, _ = conv(1, c, c // 2, h, w, 1, 0)
            cur[s] = add("transition", layer, s, f, [cur[s]], c // 2, h, w)
        return dropped

    if reduction and L > 1 and block_of[2] != 1:
        carried = transition(1)
    for layer in range(2, L + 1):
        b = block_of[layer]
        lo = b if reduction else 1
        for s in range(lo, S + 1):
            g = grow(s, b)
            if s > lo:
                diag = state[(layer - 1, s - 1)]
            else:
                diag = carried
            if diag is None:
                new = [bottleneck("h-transform", layer, s, cur[s], g)]
            else:
                new = [bottleneck("h-transform", layer, s, cur[s], g // 2),
                       bottleneck("h~-transform", layer, s, diag, g // 2)]
            parts = ([cur[s]] + new) if dense else new
            if len(parts) == 1:
                state[(layer, s)] = parts[0]
            else:
                ch = sum(nodes[i][5] for i in parts)
                state[(layer, s)] = add("concat", layer, s, 0, parts, ch, nodes[parts[0]][6], nodes[parts[0]][7])
        for s in range(lo, S + 1):
            cur[s] = state[(layer, s)]
        carried = None
        if layer in heads:
            head(layer, state[(layer, S)])
        if reduction and layer < L and block_of[layer + 1] != b:
            carried = transition(layer)

    head_ids = [i for i, n in enumerate(nodes) if n[0] == "classifier-head"]
    out = ["node_id,kind,layer,scale,flops"]
    for i, n in enumerate(nodes):
        out.append(f"{i},{n[0]},{n[1]},{n[2]},{n[3]}")
    out.append("")
    out.append("classifier,layer,cost")
    needed = set()
    for j, hid in enumerate(head_ids, start=1):
        stack = [hid]
        while stack:
            v = stack.pop()
            if v not in needed:
                needed.add(v)
                stack.extend(nodes[v][4])
        out.append(f"{j},{nodes[hid][1]},{sum(nodes[v][3] for v in needed)}")
    print("\n".join(out))


if __name__ == "__main__":
    main(sys.argv[1])
