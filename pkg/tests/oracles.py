"""Slow, literal reference implementations used as test oracles.

Nothing here imports the package's numerics; each function re-derives its
answer from first principles with plain Python loops.
"""
from __future__ import annotations

import math
from fractions import Fraction


def ref_simulate(usage: list[int], cap: int) -> list[int]:
    """Walk the skyline, grouping runs by sign(value - cap); flatten runs above the cap."""
    if cap >= max(usage):
        return list(usage)

    def sign(v):
        return (v > cap) - (v < cap)

    out: list[int] = []
    i = 0
    while i < len(usage):
        j = i
        while j + 1 < len(usage) and sign(usage[j + 1]) == sign(usage[i]):
            j += 1
        run = usage[i:j + 1]
        if run[0] > cap:
            total = sum(run)
            full, rem = divmod(total, cap)
            out.extend([cap] * full)
            if rem:
                out.append(rem)
        else:
            out.extend(run)
        i = j + 1
    return out


def ref_sections(usage: list[int], threshold: int) -> list[tuple[int, list[int], str]]:
    out = []
    cur = [usage[0]]
    start = 0
    for i in range(1, len(usage)):
        prev = (usage[i - 1] > threshold) - (usage[i - 1] < threshold)
        now = (usage[i] > threshold) - (usage[i] < threshold)
        if prev != now:
            out.append((start, cur, "over" if cur[0] > threshold else "under"))
            cur, start = [], i
        cur.append(usage[i])
    out.append((start, cur, "over" if cur[0] > threshold else "under"))
    return out


def ref_fit(points: list[tuple[float, float]]) -> tuple[float, float]:
    """Normal equations for y = c + a x in log space, solved exactly over the rationals by Cramer's rule."""
    xs = [Fraction(math.log(a)) for a, _ in points]
    ys = [Fraction(math.log(r)) for _, r in points]
    n = len(xs)
    sx, sy = sum(xs), sum(ys)
    sxx = sum(x * x for x in xs)
    sxy = sum(x * y for x, y in zip(xs, ys))
    det = n * sxx - sx * sx
    a = (n * sxy - sx * sy) / det
    c = (sxx * sy - sx * sxy) / det
    return float(a), math.exp(float(c))


def ref_optimal_tokens(a: float, threshold: float, max_tokens: int) -> int:
    """First A in 1..max_tokens whose relative marginal gain |a|/A is <= threshold."""
    for A in range(1, max_tokens + 1):
        if abs(a) / A <= threshold:
            return A
    return max_tokens


def ref_min_tokens(a: float, b: float, ref: int, loss: float) -> int:
    limit = (1 + loss) * (b * ref**a)
    for A in range(1, ref + 1):
        if b * A**a <= limit:
            return A
    return ref


def ref_execute(tasks: list[tuple[int, int, int]], cap: int) -> list[int]:
    """Second-by-second executor: stage barrier, strict FIFO by (stage, index)."""
    stages: dict[int, list[tuple[int, int]]] = {}
    for i, (d, dur, st) in sorted(enumerate(tasks), key=lambda x: (x[1][2], x[0])):
        stages.setdefault(st, []).append((d, dur))
    usage: list[int] = []
    t = 0
    for st in sorted(stages):
        queue = list(stages[st])
        running: list[list[int]] = []  # [end, demand]
        while queue or running:
            running = [r for r in running if r[0] > t]
            free = cap - sum(d for _, d in running)
            while queue and queue[0][0] <= free:
                d, dur = queue.pop(0)
                if dur > 0:
                    running.append([t + dur, d])
                    free -= d
            if not running and not queue:
                break
            while len(usage) <= t:
                usage.append(0)
            usage[t] = sum(d for _, d in running)
            t += 1
    return usage


def ref_ks(a: list[float], b: list[float]) -> float:
    pts = sorted(set(a) | set(b))
    best = Fraction(0)
    for x in pts:
        fa = Fraction(sum(v <= x for v in a), len(a))
        fb = Fraction(sum(v <= x for v in b), len(b))
        best = max(best, abs(fa - fb))
    return float(best)
