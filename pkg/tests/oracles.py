"""Naive reference implementations used only by the tests.

Everything here is written with plain Python loops and ``math`` so it shares
no code path with the vectorized package functions.
"""
import math


def dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def unit(v):
    n = math.sqrt(dot(v, v))
    return [float(x) / n for x in v]


def dist(a, b):
    c = max(-1.0, min(1.0, dot(a, b)))
    return (1.0 - c) / 2.0


def sparsity(protos):
    """``protos``: dict class -> unit vector."""
    keys = sorted(protos)
    total = 0.0
    for y in keys:
        best = math.inf
        for other in keys:
            if other != y:
                best = min(best, dist(protos[y], protos[other]))
        total += best
    return total / len(keys)


def compactness(z, labels, protos):
    sums, counts = {}, {}
    for v, y in zip(z, labels):
        sums[y] = sums.get(y, 0.0) + dist(v, protos[y])
        counts[y] = counts.get(y, 0) + 1
    return sum(sums[y] / counts[y] for y in sums) / len(sums)


def supcon(z, labels, tau):
    n = len(z)
    total = 0.0
    for k in range(n):
        denom = sum(math.exp(dot(z[k], z[j]) / tau) for j in range(n) if j != k)
        pos = [j for j in range(n) if j != k and labels[j] == labels[k]]
        acc = 0.0
        for p in pos:
            acc += math.log(math.exp(dot(z[k], z[p]) / tau) / denom)
        total += -acc / len(pos)
    return total


def auroc_pairs(known, unknown):
    wins = 0.0
    for u in unknown:
        for k in known:
            if u > k:
                wins += 1.0
            elif u == k:
                wins += 0.5
    return wins / (len(known) * len(unknown))


def mlp_forward(weights, biases, x, normalize=True):
    h = [float(v) for v in x]
    for i, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(len(b)):
            s = float(b[j])
            for k in range(len(h)):
                s += h[k] * float(w[k][j])
            out.append(s)
        if i < len(weights) - 1:
            out = [max(0.0, v) for v in out]
        h = out
    return unit(h) if normalize else h
