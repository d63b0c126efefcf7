"""Conventional GRU cell, sequence runner and backpropagation through time.

The cell follows the textbook formulation with separate input and recurrent
biases for each gate::

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    c = tanh(W_ic x + b_ic + r * (W_hc h + b_hc))
    h' = z * c + (1 - z) * h

This dense cell is the reference the dynamic (top-A) cell in
:mod:`dgrnn.dgru` is checked against.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from dgrnn import tensor as T
from dgrnn.tensor import MacCounter, ShapeError

WEIGHT_NAMES = ("w_ir", "w_iz", "w_ic", "w_hr", "w_hz", "w_hc")
BIAS_NAMES = ("b_ir", "b_iz", "b_ic", "b_hr", "b_hz", "b_hc")
PARAM_NAMES = WEIGHT_NAMES + BIAS_NAMES


@dataclass(frozen=True, eq=False)
class GruWeights:
    """The six weight matrices and six bias vectors of one GRU layer.

    Also used as the container for parameter gradients.
    """

    w_ir: T.Matrix
    w_iz: T.Matrix
    w_ic: T.Matrix
    w_hr: T.Matrix
    w_hz: T.Matrix
    w_hc: T.Matrix
    b_ir: T.Vector
    b_iz: T.Vector
    b_ic: T.Vector
    b_hr: T.Vector
    b_hz: T.Vector
    b_hc: T.Vector

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        J, I = self.w_ir.shape if self.w_ir.ndim == 2 else (None, None)
        if J is None:
            raise ShapeError(f"w_ir must be 2-D, got shape {self.w_ir.shape}")
        for name in ("w_iz", "w_ic"):
            if getattr(self, name).shape != (J, I):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(J, I)}")
        for name in ("w_hr", "w_hz", "w_hc"):
            if getattr(self, name).shape != (J, J):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(J, J)}")
        for name in BIAS_NAMES:
            if getattr(self, name).shape != (J,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(J,)}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def input_dim(self) -> int:
        return self.w_ir.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_ir.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> GruWeights:
        J, I = hidden_dim, input_dim
        return cls(
            *(np.zeros((J, I)) for _ in range(3)),
            *(np.zeros((J, J)) for _ in range(3)),
            *(np.zeros(J) for _ in range(6)),
        )

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> GruWeights:
        """Uniform init on [-1/sqrt(J), 1/sqrt(J)], drawn in field order."""
        if input_dim <= 0 or hidden_dim <= 0:
            raise ValueError("input_dim and hidden_dim must be positive")
        J, I = hidden_dim, input_dim
        k = 1.0 / np.sqrt(J)
        shapes = [(J, I)] * 3 + [(J, J)] * 3 + [(J,)] * 6
        return cls(*(rng.uniform(-k, k, size=s) for s in shapes))

    def as_dict(self) -> dict[str, NDArray[np.float64]]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def map(self, fn: Callable[[NDArray[np.float64]], NDArray[np.float64]]) -> GruWeights:
        return GruWeights(**{name: fn(arr) for name, arr in self.as_dict().items()})

    def sgd_update(self, grads: GruWeights, lr: float) -> GruWeights:
        return GruWeights(**{n: getattr(self, n) - lr * getattr(grads, n) for n in PARAM_NAMES})

    def allclose(self, other: GruWeights, atol: float = 0.0) -> bool:
        return all(np.allclose(getattr(self, n), getattr(other, n), rtol=0.0, atol=atol) for n in PARAM_NAMES)

    def __iter__(self) -> Iterator[tuple[str, NDArray[np.float64]]]:
        return iter(self.as_dict().items())


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HiddenState:
    """Neuron state ``h`` plus the most recent select-gate mask."""

    h: T.Vector
    g_last: T.Vector

    def __post_init__(self) -> None:
        h = _frozen(self.h)
        g = _frozen(self.g_last)
        if h.ndim != 1 or g.shape != h.shape:
            raise ShapeError(f"state h {h.shape} and mask {g.shape} must be equal-length vectors")
        if not np.all((g == 0.0) | (g == 1.0)):
            raise ValueError("g_last must be binary")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g_last", g)

    @classmethod
    def zeros(cls, hidden_dim: int) -> HiddenState:
        return cls(np.zeros(hidden_dim), np.ones(hidden_dim))

    @property
    def hidden_dim(self) -> int:
        return self.h.shape[0]


@dataclass
class GruTape:
    """Per-step intermediates recorded during a forward run.

    Each list holds one array per step. Arrays are either 1-D (single
    sequence) or carry leading batch dimensions. Entries of ``r`` and ``c``
    for neurons that were not selected are stored as zero.
    """

    x: list[NDArray[np.float64]] = field(default_factory=list)
    h_prev: list[NDArray[np.float64]] = field(default_factory=list)
    r: list[NDArray[np.float64]] = field(default_factory=list)
    z: list[NDArray[np.float64]] = field(default_factory=list)
    c: list[NDArray[np.float64]] = field(default_factory=list)
    g: list[NDArray[np.float64]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.x)

    def record(self, x, h_prev, r, z, c, g) -> None:
        self.x.append(x)
        self.h_prev.append(h_prev)
        self.r.append(r)
        self.z.append(z)
        self.c.append(c)
        self.g.append(g)


def _check_step_inputs(w: GruWeights, x: T.Vector, h: T.Vector) -> None:
    if x.ndim != 1 or x.shape[0] != w.input_dim:
        raise ShapeError(f"input has shape {x.shape}, expected ({w.input_dim},)")
    if h.ndim != 1 or h.shape[0] != w.hidden_dim:
        raise ShapeError(f"hidden state has shape {h.shape}, expected ({w.hidden_dim},)")


def _gru_step_full(w: GruWeights, x: T.Vector, h: T.Vector, counter: MacCounter | None):
    r = T.sigmoid(T.matvec(w.w_ir, x, counter) + w.b_ir + T.matvec(w.w_hr, h, counter) + w.b_hr)
    z = T.sigmoid(T.matvec(w.w_iz, x, counter) + w.b_iz + T.matvec(w.w_hz, h, counter) + w.b_hz)
    n = T.matvec(w.w_hc, h, counter) + w.b_hc
    c = T.tanh(T.matvec(w.w_ic, x, counter) + w.b_ic + T.hadamard(r, n, counter))
    h_new = T.hadamard(z, c, counter) + T.hadamard(1.0 - z, h, counter)
    return h_new, r, z, c


def gru_step(
    w: GruWeights, x: T.Vector, state: HiddenState, counter: MacCounter | None = None
) -> HiddenState:
    """Advance one dense GRU step. ``state`` is left untouched."""
    x = T.vector(x)
    _check_step_inputs(w, x, state.h)
    h_new, _, _, _ = _gru_step_full(w, x, state.h, counter)
    return HiddenState(h_new, np.ones(w.hidden_dim))


def gru_run(
    w: GruWeights,
    xs: Sequence[T.Vector],
    h0: HiddenState | None = None,
    counter: MacCounter | None = None,
) -> tuple[list[HiddenState], GruTape]:
    state = HiddenState.zeros(w.hidden_dim) if h0 is None else h0
    states: list[HiddenState] = []
    tape = GruTape()
    ones = np.ones(w.hidden_dim)
    for x in xs:
        x = T.vector(x)
        _check_step_inputs(w, x, state.h)
        h_new, r, z, c = _gru_step_full(w, x, state.h, counter)
        tape.record(x, state.h, r, z, c, ones)
        state = HiddenState(h_new, ones)
        states.append(state)
    return states, tape


def _flat(a: NDArray, dim: int) -> NDArray:
    return a.reshape(-1, dim)


def bptt(
    w: GruWeights, tape: GruTape, grad_h: Sequence[NDArray] | NDArray
) -> tuple[GruWeights, NDArray[np.float64], NDArray[np.float64]]:
    """Reverse-mode gradients through a recorded (possibly gated) run.

    ``grad_h[t]`` is the direct loss gradient w.r.t. the state after step
    ``t``. The gate masks in ``tape.g`` are treated as constants: an
    unselected neuron passes its gradient straight to the previous step and
    contributes nothing to the parameter gradients.

    Returns ``(param_grads, grad_x, grad_h0)``; ``grad_x`` is stacked over
    steps with the shape of the recorded inputs.
    """
    steps = len(tape)
    if len(grad_h) != steps:
        raise ShapeError(f"grad_h has {len(grad_h)} steps but the tape has {steps}")
    I, J = w.input_dim, w.hidden_dim
    acc = {name: np.zeros_like(arr) for name, arr in w.as_dict().items()}
    if steps == 0:
        return GruWeights(**acc), np.zeros((0, I)), np.zeros(J)

    batch_shape = tape.h_prev[0].shape[:-1]
    dh_next = np.zeros(batch_shape + (J,))
    grad_x = np.zeros((steps,) + batch_shape + (I,))

    for t in range(steps - 1, -1, -1):
        gh = np.asarray(grad_h[t], dtype=np.float64)
        if gh.shape != dh_next.shape:
            raise ShapeError(f"grad_h[{t}] has shape {gh.shape}, expected {dh_next.shape}")
        dh = gh + dh_next
        x, hp = tape.x[t], tape.h_prev[t]
        r, z, c, g = tape.r[t], tape.z[t], tape.c[t], tape.g[t]

        dhg = dh * g
        dz = dhg * (c - hp)
        dc = dhg * z
        dhp = dh * (1.0 - g) + dhg * (1.0 - z)

        n = hp @ w.w_hc.T + w.b_hc
        da_c = dc * (1.0 - c * c)
        dr = da_c * n
        dn = da_c * r
        da_r = dr * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)

        xf, hf = _flat(x, I), _flat(hp, J)
        for name, da, src in (
            ("ir", da_r, xf), ("iz", da_z, xf), ("ic", da_c, xf),
            ("hr", da_r, hf), ("hz", da_z, hf), ("hc", dn, hf),
        ):
            daf = _flat(da, J)
            acc["w_" + name] += daf.T @ src
            acc["b_" + name] += daf.sum(axis=0)

        grad_x[t] = da_r @ w.w_ir + da_z @ w.w_iz + da_c @ w.w_ic
        dh_next = dhp + da_r @ w.w_hr + da_z @ w.w_hz + dn @ w.w_hc

    return GruWeights(**acc), grad_x, dh_next


def gru_backward(
    w: GruWeights, tape: GruTape, grad_h: Sequence[NDArray] | NDArray
) -> tuple[GruWeights, NDArray[np.float64]]:
    """BPTT for a dense run; returns ``(param_grads, grad_x)``."""
    grads, grad_x, _ = bptt(w, tape, grad_h)
    return grads, grad_x
