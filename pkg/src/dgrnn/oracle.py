"""Brute-force verification suites run by ``dgrnn oracle``.

Each check compares the library against an independent slow computation
and returns a :class:`CheckResult`. The top-A check accepts a replacement
selector so a deliberately broken one can be fed in to confirm that the
suite catches it.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from dgrnn import dsp
from dgrnn.dgru import SelectGateConfig, Selector, dgru_backward, dgru_run, select_top_a
from dgrnn.metrics import mann_whitney_u
from dgrnn.rnn import PARAM_NAMES, GruWeights, gru_backward, gru_run


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _sorted_top_a(z, a):
    order = sorted(range(len(z)), key=lambda j: (-z[j], j))
    g = np.zeros(len(z))
    g[order[:a]] = 1.0
    return g


def flipped_tie_selector(z, a):
    """Top-A with ties broken towards the highest index; the mutation the oracle must catch."""
    z = np.asarray(z)
    rev = select_top_a(z[::-1], a)
    return rev[::-1].copy()


def check_p100_equivalence(rng: np.random.Generator, trials: int = 200) -> CheckResult:
    for k in range(trials):
        I, J, steps = (int(v) for v in (rng.integers(1, 17), rng.integers(1, 65), rng.integers(1, 33)))
        w = GruWeights.init(I, J, rng)
        xs = list(rng.uniform(-1, 1, (steps, I)))
        dense, _ = gru_run(w, xs)
        sparse, _, _ = dgru_run(w, xs, cfg=SelectGateConfig.top_a(100))
        for t, (a, b) in enumerate(zip(dense, sparse)):
            if not np.array_equal(a.h, b.h):
                return CheckResult("p100-equivalence", False, f"trial {k} step {t} differs")
    return CheckResult("p100-equivalence", True, f"{trials} random runs bit-identical")


def check_top_a_vs_sort(
    rng: np.random.Generator, trials: int = 500, selector: Selector = select_top_a
) -> CheckResult:
    for k in range(trials):
        n = int(rng.integers(1, 40))
        kind = k % 3
        if kind == 0:
            z = np.full(n, 0.5)
        elif kind == 1:
            z = rng.choice([0.1, 0.5, 0.9], size=n)
        else:
            z = rng.random(n)
        a = int(rng.integers(0, n + 1))
        got, want = selector(z, a), _sorted_top_a(z, a)
        if not np.array_equal(got, want):
            return CheckResult("top-a-vs-sort", False, f"trial {k}: n={n} a={a} selection differs from sort oracle")
    return CheckResult("top-a-vs-sort", True, f"{trials} inputs match the sort oracle")


def _fd(loss: Callable[[GruWeights], float], w: GruWeights, h: float = 1e-3) -> dict[str, np.ndarray]:
    out = {}
    for name in PARAM_NAMES:
        base = getattr(w, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for step in (-2, -1, 1, 2):
                arr = base.copy()
                arr[idx] += step * h
                vals.append(loss(GruWeights(**{**w.as_dict(), name: arr})))
            g[idx] = ((vals[0] - vals[3]) + 8 * (vals[2] - vals[1])) / (12 * h)
        out[name] = g
    return out


def _rel(a, b) -> float:
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / den))


def check_gradients(rng: np.random.Generator, trials: int = 4, tol: float = 1e-5) -> CheckResult:
    worst = 0.0
    for k in range(trials):
        I, J, steps = int(rng.integers(1, 4)), int(rng.integers(2, 7)), int(rng.integers(2, 6))
        w = GruWeights.init(I, J, rng).map(lambda a: 2 * a)
        xs = list(rng.uniform(-1, 1, (steps, I)))
        proj = rng.standard_normal((steps, J))
        _, tape = gru_run(w, xs)
        grads, _ = gru_backward(w, tape, proj)
        fd = _fd(lambda v: sum(float(p @ s.h) for p, s in zip(proj, gru_run(v, xs)[0])), w)
        _, stape, _ = dgru_run(w, xs, cfg=SelectGateConfig.top_a(50))
        gates = stape.g
        sgrads, _ = dgru_backward(w, stape, proj)
        sfd = _fd(
            lambda v: sum(float(p @ s.h) for p, s in zip(proj, dgru_run(v, xs, forced_gates=gates)[0])), w
        )
        for name, g in grads:
            worst = max(worst, _rel(g, fd[name]), _rel(getattr(sgrads, name), sfd[name]))
        if worst >= tol:
            return CheckResult("finite-differences", False, f"trial {k}: max relative error {worst:.2e}")
    return CheckResult("finite-differences", True, f"max relative error {worst:.2e}")


def check_stft_round_trip(rng: np.random.Generator, trials: int = 3) -> CheckResult:
    worst = math.inf
    for cfg in (dsp.FULL_STFT, dsp.DESK_STFT):
        for _ in range(trials):
            x = rng.standard_normal(8000) * rng.uniform(0.01, 1.0)
            y = dsp.istft(dsp.stft(dsp.AudioBuffer(x), cfg)).samples
            lo, hi = cfg.frame_len, len(y) - cfg.frame_len
            err = np.sum((x[lo:hi] - y[lo:hi]) ** 2)
            snr = 10 * math.log10(np.sum(x[lo:hi] ** 2) / max(err, 1e-300))
            worst = min(worst, snr)
    return CheckResult("stft-round-trip", worst > 60.0, f"worst interior SNR {worst:.1f} dB")


def _enum_p(a, b) -> float:
    n1, n = len(a), len(a) + len(b)
    pooled = sorted(a + b)
    rank = {v: i + 1 for i, v in enumerate(pooled)}
    u_obs = sum(rank[v] for v in a) - n1 * (n1 + 1) / 2
    mu = n1 * (n - n1) / 2
    hits = total = 0
    for combo in itertools.combinations(range(1, n + 1), n1):
        total += 1
        if abs(sum(combo) - n1 * (n1 + 1) / 2 - mu) >= abs(u_obs - mu) - 1e-12:
            hits += 1
    return hits / total


def check_u_test_enumeration(rng: np.random.Generator) -> CheckResult:
    for n in range(2, 11):
        for n1 in range(1, n):
            vals = rng.permutation(n).astype(float).tolist()
            a, b = vals[:n1], vals[n1:]
            got = mann_whitney_u(a, b).p_value
            want = _enum_p(a, b)
            if abs(got - want) > 1e-12:
                return CheckResult("u-test-enumeration", False, f"n1={n1} n2={n - n1}: {got} vs {want}")
    return CheckResult("u-test-enumeration", True, "all splits with n <= 10 match enumeration")


def run_all(seed: int = 0, selector: Selector = select_top_a, quick: bool = False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    scale = 0.25 if quick else 1.0
    return [
        check_p100_equivalence(rng, max(1, int(200 * scale))),
        check_top_a_vs_sort(rng, max(1, int(500 * scale)), selector),
        check_gradients(rng, 1 if quick else 4),
        check_stft_round_trip(rng, 1 if quick else 3),
        check_u_test_enumeration(rng),
    ]
