"""SI-SNR and the two-sided Mann-Whitney U test."""

from __future__ import annotations

import itertools
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from dgrnn.dsp import AudioBuffer

SISNR_CAP_DB = 100.0
EXACT_MAX_N = 16
SIGNIFICANCE = 0.05


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    higher_is_better: bool = True


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: str

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE


def _samples(x: AudioBuffer | ArrayLike) -> np.ndarray:
    return x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)


def sisnr(estimate: AudioBuffer | ArrayLike, reference: AudioBuffer | ArrayLike) -> MetricResult:
    """Scale-invariant SNR in dB, capped at +100 dB for a zero residual."""
    e, r = _samples(estimate), _samples(reference)
    if e.shape != r.shape:
        raise ValueError(f"estimate has {e.shape[0]} samples but reference has {r.shape[0]}")
    e = e - e.mean()
    r = r - r.mean()
    rr = float(np.dot(r, r))
    if rr == 0.0:
        raise ValueError("reference signal is silent")
    target = (np.dot(e, r) / rr) * r
    residual = e - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    # Residual at rounding level of the target counts as zero.
    if den <= 1e-20 * num or den == 0.0:
        return MetricResult("sisnr", SISNR_CAP_DB)
    if num == 0.0:
        return MetricResult("sisnr", -SISNR_CAP_DB)
    return MetricResult("sisnr", min(SISNR_CAP_DB, 10.0 * math.log10(num / den)))


def rankdata(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties given the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _u_distribution(n1: int, n2: int) -> list[int]:
    """Number of rank arrangements giving each U = 0..n1*n2 (no ties).

    Counts subsets of size n1 of {1..n1+n2} by rank sum via the standard
    recurrence f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u).
    """
    # table[m][u] for the current n
    prev = [[1] + [0] * (n1 * n2) for _ in range(n1 + 1)]  # n = 0: only U = 0
    for n in range(1, n2 + 1):
        cur = [[0] * (n1 * n2 + 1) for _ in range(n1 + 1)]
        cur[0][0] = 1
        for m in range(1, n1 + 1):
            for u in range(m * n + 1):
                cur[m][u] = prev[m][u] + (cur[m - 1][u - n] if u >= n else 0)
        prev = cur
    return prev[n1]


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> UTestResult:
    """Two-sided Mann-Whitney U test.

    Exact when the pooled size is at most 16 and there are no ties; otherwise
    the normal approximation with tie and continuity corrections. The
    reported statistic is U for the first sample.
    """
    a, b = [float(v) for v in a], [float(v) for v in b]
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    ranks = rankdata(a + b)
    u1 = sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0
    n = n1 + n2
    tied = len(set(a + b)) < n
    if n <= EXACT_MAX_N and not tied:
        counts = _u_distribution(n1, n2)
        total = math.comb(n, n1)
        u_small = int(round(min(u1, n1 * n2 - u1)))
        p = 2.0 * sum(counts[: u_small + 1]) / total
        return UTestResult(u1, min(1.0, p), "exact")

    mu = n1 * n2 / 2.0
    tie_term = 0.0
    for _, grp in itertools.groupby(sorted(a + b)):
        t = len(list(grp))
        tie_term += t**3 - t
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return UTestResult(u1, 1.0, "normal-approx")
    zstat = max(abs(u1 - mu) - 0.5, 0.0) / math.sqrt(var)
    p = math.erfc(zstat / math.sqrt(2.0))
    return UTestResult(u1, min(1.0, p), "normal-approx")


@dataclass(frozen=True)
class PValueTable:
    labels: tuple[str, ...]
    p_values: Mapping[tuple[str, str], float]

    def __getitem__(self, pair: tuple[str, str]) -> float:
        if pair in self.p_values:
            return self.p_values[pair]
        return self.p_values[(pair[1], pair[0])]

    def format(self) -> str:
        cols = self.labels[1:]
        corner = "A \\ B"
        lines = [f"{corner:<10}" + "".join(f"{c:>10}" for c in cols)]
        for i, la in enumerate(self.labels[:-1]):
            cells = []
            for j, lb in enumerate(cols, start=1):
                if j <= i:
                    cells.append(f"{'-':>10}")
                else:
                    p = self[(la, lb)]
                    mark = "*" if p < SIGNIFICANCE else " "
                    cells.append(f"{p:>9.3f}{mark}")
            lines.append(f"{la:<10}" + "".join(cells))
        return "\n".join(lines)


def compare_runs(results: Mapping[str, Sequence[float]]) -> PValueTable:
    """Pairwise two-sided U-test p-values for every pair of setups, in insertion order."""
    labels = tuple(results)
    if len(labels) < 2:
        raise ValueError("need at least two setups to compare")
    counts = {len(v) for v in results.values()}
    if len(counts) != 1:
        raise ValueError(f"setups have unequal trial counts: { {k: len(v) for k, v in results.items()} }")
    table = {}
    for i, la in enumerate(labels):
        for lb in labels[i + 1 :]:
            table[(la, lb)] = mann_whitney_u(results[la], results[lb]).p_value
    return PValueTable(labels, table)
