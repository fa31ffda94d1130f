"""Slow, independent reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def gather_loop(channels, col, row, radius=2):
    c, h, w = channels.shape
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            r = min(max(row + dy, 0), h - 1)
            cc = min(max(col + dx, 0), w - 1)
            for ch in range(c):
                out.append(channels[ch, r, cc])
    return np.array(out)


def bilinear_point(data, fx, fy):
    """Bilinear value at fractional pixel position (corner convention) with edge clamping."""
    h, w = data.shape
    px, py = fx - 0.5, fy - 0.5
    x0, y0 = math.floor(px), math.floor(py)
    ax, ay = px - x0, py - y0
    def at(r, c):
        return float(data[min(max(r, 0), h - 1), min(max(c, 0), w - 1)])
    top = at(y0, x0) * (1 - ax) + at(y0, x0 + 1) * ax
    bot = at(y0 + 1, x0) * (1 - ax) + at(y0 + 1, x0 + 1) * ax
    return top * (1 - ay) + bot * ay


def best_split_exhaustive(x, y):
    """Lowest-SSE single split of one feature: (threshold, sse)."""
    best = (None, float("inf"))
    xs = sorted(set(x))
    for a, b in zip(xs[:-1], xs[1:]):
        t = 0.5 * (a + b)
        left = [v for u, v in zip(x, y) if u <= t]
        right = [v for u, v in zip(x, y) if u > t]
        sse = sum((v - np.mean(left)) ** 2 for v in left) + sum((v - np.mean(right)) ** 2 for v in right)
        if sse < best[1] - 1e-12:
            best = (t, sse)
    return best


def ward_bruteforce(points):
    """Merge heights of minimal-variance agglomeration, recomputed from raw points each step."""
    clusters = [[i] for i in range(len(points))]
    P = np.asarray(points, dtype=np.float64)
    heights = []
    def ess(ix):
        q = P[ix]
        return float(((q - q.mean(axis=0)) ** 2).sum())
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            inc = ess(clusters[a] + clusters[b]) - ess(clusters[a]) - ess(clusters[b])
            if best is None or inc < best[0] - 1e-12:
                best = (inc, a, b)
        inc, a, b = best
        heights.append(math.sqrt(2 * inc))
        merged = clusters[a] + clusters[b]
        clusters = [c for i, c in enumerate(clusters) if i not in (a, b)] + [merged]
    return heights


def longest_circular_run_loop(flags):
    f = list(flags)
    n = len(f)
    if all(f):
        return n
    best = 0
    for s in range(n):
        k = 0
        while k < n and f[(s + k) % n]:
            k += 1
        best = max(best, k)
    return best


def groupby_stats(values, labels, cell_ha):
    out = {}
    for lab in sorted(set(labels)):
        v = [x for x, l in zip(values, labels) if l == lab]
        dens = [0.47 * x for x in v]
        m = sum(dens) / len(dens)
        sd = math.sqrt(sum((d - m) ** 2 for d in dens) / len(dens))
        out[lab] = (len(v), len(v) * cell_ha, m, sd, math.fsum(d * cell_ha for d in dens))
    return out



def finite_difference_check(net, xn, y, w, loss_and_grad, forward, step=1e-3):
    """Largest element-wise relative error between analytic and central-difference gradients.

    Also returns how many stencil evaluations changed the rectifier on/off
    pattern; a non-zero count means the instance straddles a kink and the
    difference quotient is not a derivative estimate there.
    """
    def pattern():
        _, _, (cache, _, _) = forward(net, xn, keep=True)
        return [z > 0 for _, z, _ in cache]

    base = pattern()
    _, grads = loss_and_grad(net, xn, y, w)
    worst, flips = 0.0, 0
    for name, p in net.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            vals = []
            for d in (step, -step):
                flat[k] = orig + d
                vals.append(loss_and_grad(net, xn, y, w)[0])
                flips += any((a != b).any() for a, b in zip(pattern(), base))
            flat[k] = orig
            num = (vals[0] - vals[1]) / (2 * step)
            worst = max(worst, abs(num - g[k]) / max(abs(num), abs(g[k]), 1e-8))
    return worst, flips
