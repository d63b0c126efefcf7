"""Dynamic GRU: update only the neurons picked by a select gate.

The update gate ``z`` is always computed for every neuron. It then ranks the
neurons: in top-A mode the ``A`` largest ``z`` values are selected, in
threshold mode every neuron with ``z > theta``. Selected neurons run the
usual reset/candidate/blend computation row by row; all others keep their
previous value bit-for-bit and cost no reset/candidate MACs.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from dgrnn import tensor as T
from dgrnn.rnn import GruTape, GruWeights, HiddenState, bptt
from dgrnn.tensor import MacCounter, ShapeError

DEFAULT_THRESHOLD = 0.5


class GateMode(str, enum.Enum):
    TOP_A = "top-a"
    THRESHOLD = "threshold"
    DENSE = "dense"


@dataclass(frozen=True)
class SelectGateConfig:
    mode: GateMode = GateMode.DENSE
    update_percent: float = 100.0
    theta: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", GateMode(self.mode))
        p = float(self.update_percent)
        if not (0.0 <= p <= 100.0):
            raise ValueError(f"update_percent must lie in [0, 100], got {p}")
        object.__setattr__(self, "update_percent", p)
        if self.theta is not None:
            theta = tuple(float(t) for t in np.ravel(self.theta))
            if any(not (0.0 <= t <= 1.0) for t in theta):
                raise ValueError("every threshold must lie in [0, 1]")
            object.__setattr__(self, "theta", theta)

    @classmethod
    def dense(cls) -> SelectGateConfig:
        return cls(GateMode.DENSE)

    @classmethod
    def top_a(cls, update_percent: float) -> SelectGateConfig:
        return cls(GateMode.TOP_A, update_percent)

    @classmethod
    def threshold(cls, theta: ArrayLike | None = None) -> SelectGateConfig:
        return cls(GateMode.THRESHOLD, theta=None if theta is None else tuple(np.ravel(theta)))

    def count(self, hidden_dim: int) -> int:
        """Neurons updated per step in top-A mode: round(P/100 * J), halves away from zero."""
        if self.mode is GateMode.DENSE:
            return hidden_dim
        if self.mode is not GateMode.TOP_A:
            raise ValueError("a fixed update count exists only for top-a and dense gates")
        return int(math.floor(self.update_percent * hidden_dim / 100.0 + 0.5))

    def theta_for(self, hidden_dim: int) -> T.Vector:
        if self.theta is None:
            return np.full(hidden_dim, DEFAULT_THRESHOLD)
        if len(self.theta) == 1:
            return np.full(hidden_dim, self.theta[0])
        if len(self.theta) != hidden_dim:
            raise ShapeError(f"theta has {len(self.theta)} entries, expected {hidden_dim}")
        return np.array(self.theta)

    def effective_percent(self, hidden_dim: int) -> float:
        """Realised update percentage for fixed-count gates."""
        return 100.0 * self.count(hidden_dim) / hidden_dim


@dataclass(frozen=True)
class StepStats:
    updated_count: int
    hidden_dim: int
    matvec_macs: int
    elementwise_macs: int

    @property
    def update_percent_t(self) -> float:
        return 100.0 * self.updated_count / self.hidden_dim

    @property
    def macs_this_step(self) -> int:
        return self.matvec_macs + self.elementwise_macs


def step_macs(input_dim: int, hidden_dim: int, updated: int) -> tuple[int, int]:
    """(matvec, elementwise) MACs of one dynamic step updating ``updated`` neurons."""
    width = input_dim + hidden_dim
    return hidden_dim * width + 2 * updated * width, 3 * updated


def select_top_a(z: ArrayLike, a: int) -> T.Vector:
    """Binary mask of the ``a`` largest entries of ``z``; equal values go to the lower index.

    Runs in expected linear time: a partition finds the a-th largest value,
    everything above it is taken and the remaining slots are filled with the
    lowest-indexed entries equal to it.
    """
    z = T.vector(z)
    n = z.shape[0]
    if not 0 <= a <= n:
        raise ValueError(f"cannot select {a} of {n} neurons")
    g = np.zeros(n)
    if a == 0:
        return g
    if a == n:
        g[:] = 1.0
        return g
    kth = np.partition(z, n - a)[n - a]
    above = z > kth
    g[above] = 1.0
    need = a - int(np.count_nonzero(above))
    ties = np.flatnonzero(z == kth)[:need]
    g[ties] = 1.0
    return g


def select_threshold(z: ArrayLike, theta: ArrayLike) -> T.Vector:
    z, theta = T.vector(z), T.vector(theta)
    if z.shape != theta.shape:
        raise ShapeError(f"z has {z.shape[0]} entries but theta has {theta.shape[0]}")
    return (z > theta).astype(np.float64)


Selector = Callable[[T.Vector, int], T.Vector]


def select_gate(z: T.Vector, cfg: SelectGateConfig, selector: Selector = select_top_a) -> T.Vector:
    J = z.shape[0]
    if cfg.mode is GateMode.DENSE:
        return np.ones(J)
    if cfg.mode is GateMode.TOP_A:
        return selector(z, cfg.count(J))
    return select_threshold(z, cfg.theta_for(J))


def _dgru_step_full(
    w: GruWeights,
    x: T.Vector,
    h: T.Vector,
    cfg: SelectGateConfig,
    counter: MacCounter | None,
    gate: T.Vector | None = None,
):
    I, J = w.input_dim, w.hidden_dim
    local = MacCounter()
    z = T.sigmoid(T.matvec(w.w_iz, x, local) + w.b_iz + T.matvec(w.w_hz, h, local) + w.b_hz)
    g = select_gate(z, cfg) if gate is None else gate
    rows = np.flatnonzero(g)

    zs, hs = z[rows], h[rows]
    r_s = T.sigmoid(
        T.matvec_rows(w.w_ir, x, rows, local) + w.b_ir[rows] + T.matvec_rows(w.w_hr, h, rows, local) + w.b_hr[rows]
    )
    n_s = T.matvec_rows(w.w_hc, h, rows, local) + w.b_hc[rows]
    c_s = T.tanh(T.matvec_rows(w.w_ic, x, rows, local) + w.b_ic[rows] + T.hadamard(r_s, n_s, local))
    h_new = h.copy()
    h_new[rows] = T.hadamard(zs, c_s, local) + T.hadamard(1.0 - zs, hs, local)

    r = np.zeros(J)
    c = np.zeros(J)
    r[rows] = r_s
    c[rows] = c_s
    if counter is not None:
        counter.matvec += local.matvec
        counter.elementwise += local.elementwise
    stats = StepStats(len(rows), J, local.matvec, local.elementwise)
    return h_new, r, z, c, g, stats


def _check(w: GruWeights, x: T.Vector, h: T.Vector) -> None:
    if x.ndim != 1 or x.shape[0] != w.input_dim:
        raise ShapeError(f"input has shape {x.shape}, expected ({w.input_dim},)")
    if h.shape != (w.hidden_dim,):
        raise ShapeError(f"hidden state has shape {h.shape}, expected ({w.hidden_dim},)")


def dgru_step(
    w: GruWeights,
    x: T.Vector,
    state: HiddenState,
    cfg: SelectGateConfig,
    counter: MacCounter | None = None,
) -> tuple[HiddenState, StepStats]:
    x = T.vector(x)
    _check(w, x, state.h)
    h_new, _, _, _, g, stats = _dgru_step_full(w, x, state.h, cfg, counter)
    return HiddenState(h_new, g), stats


def dgru_run(
    w: GruWeights,
    xs: Sequence[T.Vector],
    h0: HiddenState | None = None,
    cfg: SelectGateConfig = SelectGateConfig(),
    forced_gates: Sequence[ArrayLike] | None = None,
    counter: MacCounter | None = None,
) -> tuple[list[HiddenState], GruTape, list[StepStats]]:
    """Run a sequence through the dynamic cell.

    ``forced_gates`` pins the select-gate mask of every step instead of
    deriving it from ``z``; used to check gradients with a frozen selection.
    """
    if forced_gates is not None and len(forced_gates) != len(xs):
        raise ShapeError(f"{len(forced_gates)} forced gates for {len(xs)} steps")
    state = HiddenState.zeros(w.hidden_dim) if h0 is None else h0
    states: list[HiddenState] = []
    stats: list[StepStats] = []
    tape = GruTape()
    for t, x in enumerate(xs):
        x = T.vector(x)
        _check(w, x, state.h)
        gate = None if forced_gates is None else T.vector(forced_gates[t])
        h_new, r, z, c, g, st = _dgru_step_full(w, x, state.h, cfg, counter, gate)
        tape.record(x, state.h, r, z, c, g)
        state = HiddenState(h_new, g)
        states.append(state)
        stats.append(st)
    return states, tape, stats


def dgru_backward(
    w: GruWeights, tape: GruTape, grad_h: Sequence[NDArray] | NDArray
) -> tuple[GruWeights, NDArray[np.float64]]:
    """BPTT with the recorded selection held constant; returns ``(param_grads, grad_x)``."""
    grads, grad_x, _ = bptt(w, tape, grad_h)
    return grads, grad_x


def batch_gate(z: NDArray[np.float64], cfg: SelectGateConfig) -> NDArray[np.float64]:
    """Row-wise select gate for a (batch, J) block of update-gate values."""
    J = z.shape[-1]
    if cfg.mode is GateMode.DENSE:
        return np.ones_like(z)
    if cfg.mode is GateMode.THRESHOLD:
        return (z > cfg.theta_for(J)).astype(np.float64)
    a = cfg.count(J)
    g = np.zeros_like(z)
    if a:
        order = np.argsort(-z, axis=-1, kind="stable")[..., :a]
        np.put_along_axis(g, order, 1.0, axis=-1)
    return g


def run_batch(
    w: GruWeights,
    xs: NDArray[np.float64],
    cfg: SelectGateConfig = SelectGateConfig(),
    h0: NDArray[np.float64] | None = None,
) -> tuple[NDArray[np.float64], GruTape]:
    """Training-time forward over a (T, batch, I) block.

    Gate semantics match :func:`dgru_run`, but reset and candidate values are
    computed for every neuron and masked afterwards, which is cheaper in numpy
    than per-row gathers. Use :func:`dgru_run` where MAC savings matter.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3 or xs.shape[2] != w.input_dim:
        raise ShapeError(f"batched input must be (T, B, {w.input_dim}), got {xs.shape}")
    steps, batch, _ = xs.shape
    J = w.hidden_dim
    h = np.zeros((batch, J)) if h0 is None else np.asarray(h0, dtype=np.float64)
    tape = GruTape()
    out = np.empty((steps, batch, J))
    wir, wiz, wic = w.w_ir.T, w.w_iz.T, w.w_ic.T
    whr, whz, whc = w.w_hr.T, w.w_hz.T, w.w_hc.T
    for t in range(steps):
        x = xs[t]
        z = T.sigmoid(x @ wiz + w.b_iz + h @ whz + w.b_hz)
        g = batch_gate(z, cfg)
        r = T.sigmoid(x @ wir + w.b_ir + h @ whr + w.b_hr) * g
        c = np.tanh(x @ wic + w.b_ic + r * (h @ whc + w.b_hc)) * g
        h_new = g * (z * c + (1.0 - z) * h) + (1.0 - g) * h
        tape.record(x, h, r, z, c, g)
        out[t] = h_new
        h = h_new
    return out, tape
