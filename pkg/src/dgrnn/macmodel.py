"""Multiply-accumulate accounting for the enhancement network.

Convention: one MAC per multiply inside a matrix-vector product and one per
elementwise multiply. Bias additions, activations, comparisons and the top-A
selection itself cost nothing.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from dgrnn.dgru import GateMode, SelectGateConfig, StepStats

FRAMES_PER_SECOND = 100.0


class LayerKind(str, enum.Enum):
    FC = "FC"
    GRU = "GRU"
    DGRU = "DGRU"
    ELEMENTWISE = "Elementwise"


@dataclass(frozen=True)
class LayerCost:
    name: str
    macs_per_frame: float
    kind: LayerKind

    def __post_init__(self) -> None:
        if self.macs_per_frame < 0:
            raise ValueError(f"layer {self.name!r} has negative cost")

    @property
    def is_gru(self) -> bool:
        return self.kind in (LayerKind.GRU, LayerKind.DGRU)


@dataclass(frozen=True)
class MacReport:
    layers: tuple[LayerCost, ...]
    frames_per_second: float
    dense_total_macs_per_s: float
    gru_matvec_macs_per_s: float = 0.0
    dense_gru_matvec_macs_per_s: float = 0.0
    extras: Mapping[str, float] = field(default_factory=dict)

    @property
    def non_gru_macs_per_s(self) -> float:
        return sum(l.macs_per_frame for l in self.layers if not l.is_gru) * self.frames_per_second

    @property
    def gru_macs_per_s(self) -> float:
        return sum(l.macs_per_frame for l in self.layers if l.is_gru) * self.frames_per_second

    @property
    def total_macs_per_s(self) -> float:
        return self.non_gru_macs_per_s + self.gru_macs_per_s

    @property
    def percent_of_dense(self) -> float:
        return 100.0 * self.total_macs_per_s / self.dense_total_macs_per_s

    @property
    def gru_matvec_ratio(self) -> float:
        if not self.dense_gru_matvec_macs_per_s:
            return 1.0
        return self.gru_matvec_macs_per_s / self.dense_gru_matvec_macs_per_s

    def as_dict(self) -> dict[str, float]:
        out = {
            "non_gru_macs_per_s": self.non_gru_macs_per_s,
            "gru_macs_per_s": self.gru_macs_per_s,
            "total_macs_per_s": self.total_macs_per_s,
            "percent_of_dense": self.percent_of_dense,
            "gru_matvec_ratio": self.gru_matvec_ratio,
            "frames_per_second": self.frames_per_second,
        }
        for l in self.layers:
            out[f"layer.{l.name}.macs_per_frame"] = l.macs_per_frame
        out.update(self.extras)
        return out


def fc_macs(in_dim: int, out_dim: int) -> int:
    if in_dim <= 0 or out_dim <= 0:
        raise ValueError("layer dimensions must be positive")
    return in_dim * out_dim


def gru_matvec_macs(in_dim: int, hidden: int) -> int:
    if in_dim <= 0 or hidden <= 0:
        raise ValueError("layer dimensions must be positive")
    return 3 * (in_dim * hidden + hidden * hidden)


def gru_macs(in_dim: int, hidden: int) -> int:
    """Dense GRU cost per frame: six matvecs plus three elementwise products per neuron."""
    return gru_matvec_macs(in_dim, hidden) + 3 * hidden


def dgru_scale(p: float) -> float:
    """Fraction of dense GRU compute left when P percent of neurons update."""
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"update percentage must lie in [0, 100], got {p}")
    return (1.0 + 2.0 * p / 100.0) / 3.0


@dataclass(frozen=True)
class NetworkShape:
    """Dimensions of the FC -> GRU x N -> FC mask network."""

    feature_dim: int = 161
    hidden_dim: int = 320
    num_gru_layers: int = 2

    def gru_dims(self) -> list[tuple[int, int]]:
        return [(self.hidden_dim, self.hidden_dim)] * self.num_gru_layers


FULL_SHAPE = NetworkShape(161, 320, 2)


def _fixed_layers(shape: NetworkShape) -> list[LayerCost]:
    F, J = shape.feature_dim, shape.hidden_dim
    return [
        LayerCost("fc_in", fc_macs(F, J), LayerKind.FC),
        LayerCost("fc_out", fc_macs(J, F), LayerKind.FC),
        LayerCost("mask_apply", F, LayerKind.ELEMENTWISE),
    ]


def _dense_total(shape: NetworkShape) -> float:
    return sum(l.macs_per_frame for l in _fixed_layers(shape)) + sum(gru_macs(i, j) for i, j in shape.gru_dims())


def report(
    shape: NetworkShape = FULL_SHAPE,
    cfg: SelectGateConfig = SelectGateConfig(),
    frames_per_second: float = FRAMES_PER_SECOND,
) -> MacReport:
    """Analytic cost report.

    Top-A layers are charged ``dgru_scale`` of the dense GRU cost, evaluated
    at the realised percentage ``100 * A / J`` so that non-divisible hidden
    sizes stay consistent with what the cell actually computes. Threshold
    gates have no fixed cost and are reported at the dense upper bound.
    """
    layers = _fixed_layers(shape)
    matvec = dense_matvec = 0.0
    for k, (i, j) in enumerate(shape.gru_dims()):
        dense = gru_macs(i, j)
        dense_matvec += gru_matvec_macs(i, j)
        if cfg.mode is GateMode.TOP_A:
            s = dgru_scale(cfg.effective_percent(j))
            layers.append(LayerCost(f"gru{k + 1}", dense * s, LayerKind.DGRU))
            matvec += gru_matvec_macs(i, j) * s
        else:
            layers.append(LayerCost(f"gru{k + 1}", dense, LayerKind.GRU))
            matvec += gru_matvec_macs(i, j)
    return MacReport(
        tuple(layers),
        frames_per_second,
        _dense_total(shape) * frames_per_second,
        matvec * frames_per_second,
        dense_matvec * frames_per_second,
    )


def measure(
    stats: Mapping[str, Sequence[StepStats]] | Sequence[StepStats],
    frames_per_second: float = FRAMES_PER_SECOND,
    shape: NetworkShape | None = None,
    input_dims: Mapping[str, int] | None = None,
) -> MacReport:
    """Report built from the MACs the cells actually counted.

    ``stats`` maps a layer name to its per-step statistics (a bare sequence
    is treated as one layer named ``gru1``). With ``shape`` the fixed FC and
    mask layers are included, otherwise only the recurrent layers appear.
    ``input_dims`` gives each layer's input width for the dense reference;
    it defaults to the hidden size.
    """
    if not isinstance(stats, Mapping):
        stats = {"gru1": stats}
    if not stats or any(len(s) == 0 for s in stats.values()):
        raise ValueError("measure needs at least one recorded step per layer")
    layers = _fixed_layers(shape) if shape is not None else []
    dense_total = sum(l.macs_per_frame for l in layers)
    matvec = dense_matvec = 0.0
    percents = []
    for name, steps in stats.items():
        n = len(steps)
        j = steps[0].hidden_dim
        i = (input_dims or {}).get(name, j)
        per_frame = sum(s.macs_this_step for s in steps) / n
        dense_total += gru_macs(i, j)
        matvec += sum(s.matvec_macs for s in steps) / n
        dense_matvec += gru_matvec_macs(i, j)
        dynamic = any(s.updated_count != j for s in steps)
        layers.append(LayerCost(name, per_frame, LayerKind.DGRU if dynamic else LayerKind.GRU))
        percents.append(sum(s.update_percent_t for s in steps) / n)
    return MacReport(
        tuple(layers),
        frames_per_second,
        dense_total * frames_per_second,
        matvec * frames_per_second,
        dense_matvec * frames_per_second,
        {"mean_update_percent": sum(percents) / len(percents)},
    )


def format_table(rows: Iterable[tuple[str, MacReport]]) -> str:
    """Plain-text table with one row per label: non-GRU, GRU and all-layer MAC rates in M/s."""
    lines = [f"{'setup':<12}{'non-GRU':>10}{'GRU':>10}{'All layers':>12}{'%':>8}"]
    for label, rep in rows:
        lines.append(
            f"{label:<12}{rep.non_gru_macs_per_s / 1e6:>10.2f}{rep.gru_macs_per_s / 1e6:>10.2f}"
            f"{rep.total_macs_per_s / 1e6:>12.2f}{rep.percent_of_dense:>7.1f}%"
        )
    return "\n".join(lines)


def format_kv(rep: MacReport, prefix: str = "") -> str:
    return "\n".join(f"{prefix}{k}={v!r}" for k, v in rep.as_dict().items())


def to_json(rep: MacReport) -> str:
    return json.dumps(rep.as_dict(), indent=2, sort_keys=True)
