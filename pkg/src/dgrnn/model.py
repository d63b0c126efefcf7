"""Mask-estimation network FC -> GRU -> GRU -> FC -> sigmoid, its training loop and weight files.

The network reads raw noisy magnitude frames and predicts a ratio mask per
time-frequency bin. Inference runs through the dynamic cell frame by frame,
so MAC counts are real; training uses the batched, masked forward of
:func:`dgrnn.dgru.run_batch` and plain mini-batch SGD.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from dgrnn import dsp, tensor as T
from dgrnn.dgru import SelectGateConfig, StepStats, dgru_run, run_batch
from dgrnn.macmodel import MacReport, NetworkShape, measure
from dgrnn.rnn import PARAM_NAMES, GruWeights, bptt

log = logging.getLogger(__name__)

MAGIC = b"DGRU"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnhanceModelConfig:
    feature_dim: int = 161
    hidden_dim: int = 320
    num_gru_layers: int = 2
    gate: SelectGateConfig = SelectGateConfig()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.feature_dim <= 0 or self.hidden_dim <= 0 or self.num_gru_layers <= 0:
            raise ValueError("feature_dim, hidden_dim and num_gru_layers must be positive")

    @classmethod
    def desk(cls, **kw) -> EnhanceModelConfig:
        """32 hidden units on 33 bins (64-point FFT)."""
        return cls(feature_dim=33, hidden_dim=32, **kw)

    @property
    def stft(self) -> dsp.StftConfig:
        n = 2 * (self.feature_dim - 1)
        return dsp.StftConfig(n, n, n // 2)


@dataclass(frozen=True, eq=False)
class EnhanceModel:
    fc_in_w: NDArray[np.float64]
    fc_in_b: NDArray[np.float64]
    grus: tuple[GruWeights, ...]
    fc_out_w: NDArray[np.float64]
    fc_out_b: NDArray[np.float64]

    def __post_init__(self) -> None:
        J, F = np.shape(self.fc_in_w)
        for name, arr, shape in (
            ("fc_in_b", self.fc_in_b, (J,)),
            ("fc_out_w", self.fc_out_w, (F, J)),
            ("fc_out_b", self.fc_out_b, (F,)),
        ):
            if np.shape(arr) != shape:
                raise ValueError(f"{name} has shape {np.shape(arr)}, expected {shape}")
        if not self.grus:
            raise ValueError("model needs at least one GRU layer")
        for k, g in enumerate(self.grus):
            if (g.input_dim, g.hidden_dim) != (J, J):
                raise ValueError(f"gru{k + 1} is {g.input_dim}->{g.hidden_dim}, expected {J}->{J}")
        object.__setattr__(self, "grus", tuple(self.grus))

    @property
    def feature_dim(self) -> int:
        return self.fc_in_w.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.fc_in_w.shape[0]

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(self.feature_dim, self.hidden_dim, len(self.grus))

    @property
    def stft(self) -> dsp.StftConfig:
        n = 2 * (self.feature_dim - 1)
        return dsp.StftConfig(n, n, n // 2)

    @property
    def frames_per_second(self) -> float:
        return dsp.SAMPLE_RATE / self.stft.hop

    @classmethod
    def init(cls, cfg: EnhanceModelConfig) -> EnhanceModel:
        rng = np.random.default_rng(cfg.seed)
        F, J = cfg.feature_dim, cfg.hidden_dim
        kin, kout = 1.0 / np.sqrt(F), 1.0 / np.sqrt(J)
        fc_in_w = rng.uniform(-kin, kin, (J, F))
        fc_in_b = rng.uniform(-kin, kin, J)
        grus = tuple(GruWeights.init(J, J, rng) for _ in range(cfg.num_gru_layers))
        fc_out_w = rng.uniform(-kout, kout, (F, J))
        fc_out_b = rng.uniform(-kout, kout, F)
        return cls(fc_in_w, fc_in_b, grus, fc_out_w, fc_out_b)

    @classmethod
    def zeros(cls, cfg: EnhanceModelConfig) -> EnhanceModel:
        F, J = cfg.feature_dim, cfg.hidden_dim
        return cls(
            np.zeros((J, F)), np.zeros(J),
            tuple(GruWeights.zeros(J, J) for _ in range(cfg.num_gru_layers)),
            np.zeros((F, J)), np.zeros(F),
        )

    def tensors(self) -> dict[str, NDArray[np.float64]]:
        out = {"fc_in.weight": self.fc_in_w, "fc_in.bias": self.fc_in_b}
        for k, g in enumerate(self.grus):
            for name, arr in g:
                out[f"gru{k + 1}.{name}"] = arr
        out["fc_out.weight"] = self.fc_out_w
        out["fc_out.bias"] = self.fc_out_b
        return out

    def sgd_update(self, grads: EnhanceModel, lr: float) -> EnhanceModel:
        return EnhanceModel(
            self.fc_in_w - lr * grads.fc_in_w,
            self.fc_in_b - lr * grads.fc_in_b,
            tuple(g.sgd_update(d, lr) for g, d in zip(self.grus, grads.grus)),
            self.fc_out_w - lr * grads.fc_out_w,
            self.fc_out_b - lr * grads.fc_out_b,
        )

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.tensors().values())))

    def max_abs_diff(self, other: EnhanceModel) -> float:
        a, b = self.tensors(), other.tensors()
        if a.keys() != b.keys():
            raise ValueError("models have different layouts")
        return max(float(np.max(np.abs(a[k] - b[k]))) for k in a)


def _layer_names(model: EnhanceModel) -> list[str]:
    return [f"gru{k + 1}" for k in range(len(model.grus))]


def forward(
    model: EnhanceModel, noisy_mag: NDArray[np.float64], gate: SelectGateConfig = SelectGateConfig()
) -> tuple[NDArray[np.float64], dict[str, list[StepStats]]]:
    """Causal mask inference; returns the (T, F) mask and per-layer step stats."""
    x = np.asarray(noisy_mag, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.feature_dim:
        raise ValueError(f"noisy magnitude must be (T, {model.feature_dim}), got {x.shape}")
    seq = list(x @ model.fc_in_w.T + model.fc_in_b)
    stats: dict[str, list[StepStats]] = {}
    for name, w in zip(_layer_names(model), model.grus):
        states, _, st = dgru_run(w, seq, cfg=gate)
        seq = [s.h for s in states]
        stats[name] = st
    hs = np.array(seq).reshape(len(seq), model.hidden_dim)
    mask = T.sigmoid(hs @ model.fc_out_w.T + model.fc_out_b)
    return mask, stats


def loss_mag_mse(mask, noisy_mag, clean_mag) -> float:
    mask, noisy_mag, clean_mag = (np.asarray(a, dtype=np.float64) for a in (mask, noisy_mag, clean_mag))
    if not (mask.shape == noisy_mag.shape == clean_mag.shape):
        raise ValueError(f"shape mismatch: {mask.shape}, {noisy_mag.shape}, {clean_mag.shape}")
    return float(np.mean(np.square(mask * noisy_mag - clean_mag)))


def _forward_batch(model: EnhanceModel, X: NDArray, gate: SelectGateConfig):
    """X is (T, B, F). Returns mask and everything the backward pass needs."""
    u = X @ model.fc_in_w.T + model.fc_in_b
    tapes = []
    seq = u
    for w in model.grus:
        seq, tape = run_batch(w, seq, gate)
        tapes.append(tape)
    mask = T.sigmoid(seq @ model.fc_out_w.T + model.fc_out_b)
    return mask, seq, tapes


def loss_and_grads(
    model: EnhanceModel, noisy: NDArray, clean: NDArray, gate: SelectGateConfig = SelectGateConfig()
) -> tuple[float, EnhanceModel]:
    """Mean magnitude MSE over a (B, T, F) batch and its gradient w.r.t. every parameter."""
    X = np.swapaxes(np.asarray(noisy, dtype=np.float64), 0, 1)
    S = np.swapaxes(np.asarray(clean, dtype=np.float64), 0, 1)
    mask, h_top, tapes = _forward_batch(model, X, gate)
    err = mask * X - S
    loss = float(np.mean(err * err))
    d_mask = 2.0 * err * X / err.size
    d_o = d_mask * mask * (1.0 - mask)
    F, J = model.feature_dim, model.hidden_dim
    d_o_f = d_o.reshape(-1, F)
    g_out_w = d_o_f.T @ h_top.reshape(-1, J)
    g_out_b = d_o_f.sum(axis=0)
    d_seq = d_o @ model.fc_out_w
    gru_grads = []
    for w, tape in zip(reversed(model.grus), reversed(tapes)):
        g, d_seq, _ = bptt(w, tape, d_seq)
        gru_grads.append(g)
    d_u = d_seq.reshape(-1, J)
    g_in_w = d_u.T @ X.reshape(-1, F)
    g_in_b = d_u.sum(axis=0)
    grads = EnhanceModel(g_in_w, g_in_b, tuple(reversed(gru_grads)), g_out_w, g_out_b)
    return loss, grads


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4.0
    epochs: int = 5
    batch_size: int = 2
    snr_range: tuple[float, float] = (-5.0, 15.0)
    num_utterances: int = 200
    seconds: float = 1.0
    seed: int = 0
    gate: SelectGateConfig = SelectGateConfig()
    clip_norm: float | None = 0.05

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")


@dataclass
class Features:
    """Stacked (N, T, F) magnitudes of a set of equal-length utterances."""

    noisy: NDArray[np.float64]
    clean: NDArray[np.float64]
    noise: NDArray[np.float64]
    utterances: Sequence[dsp.Utterance] = field(default_factory=list)


def featurize(utterances: Sequence[dsp.Utterance], cfg: dsp.StftConfig) -> Features:
    mags = {"noisy": [], "clean": [], "noise": []}
    for u in utterances:
        for key in mags:
            mags[key].append(dsp.magnitude(dsp.stft(getattr(u, key), cfg)))
    return Features(*(np.stack(mags[k]) for k in ("noisy", "clean", "noise")), utterances)


def evaluate_loss(model: EnhanceModel, feats: Features, gate: SelectGateConfig, batch_size: int = 16) -> float:
    """Mean magnitude MSE over a feature set, batched in fixed order."""
    total, n = 0.0, feats.noisy.shape[0]
    for start in range(0, n, batch_size):
        X = np.swapaxes(feats.noisy[start : start + batch_size], 0, 1)
        S = np.swapaxes(feats.clean[start : start + batch_size], 0, 1)
        mask, _, _ = _forward_batch(model, X, gate)
        total += float(np.sum(np.square(mask * X - S)))
    return total / feats.noisy.size


def train(
    model: EnhanceModel,
    data: Features | Sequence[dsp.Utterance] | Callable[[TrainConfig], Sequence[dsp.Utterance]],
    tc: TrainConfig = TrainConfig(),
    progress: Callable[[int, float], None] | None = None,
) -> tuple[EnhanceModel, list[float]]:
    """Mini-batch SGD on the magnitude MSE.

    ``data`` is a feature set, a list of utterances, or a callable producing
    utterances from the config. The returned curve has ``epochs + 1``
    entries: the loss before training and after each epoch, each evaluated
    over the whole training set.
    """
    if callable(data) and not isinstance(data, (Features, Sequence)):
        data = data(tc)
    feats = data if isinstance(data, Features) else featurize(data, model.stft)
    if feats.noisy.shape[2] != model.feature_dim:
        raise ValueError(f"features have {feats.noisy.shape[2]} bins but the model expects {model.feature_dim}")
    rng = np.random.default_rng(tc.seed)
    n = feats.noisy.shape[0]
    curve = [evaluate_loss(model, feats, tc.gate)]
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, tc.batch_size):
            idx = np.sort(order[start : start + tc.batch_size])
            try:
                loss, grads = loss_and_grads(model, feats.noisy[idx], feats.clean[idx], tc.gate)
            except ValueError as exc:
                raise TrainingDiverged(f"gradients became non-finite in epoch {epoch}") from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
            if tc.learning_rate:
                step = tc.learning_rate
                if tc.clip_norm is not None:
                    norm = grads.global_norm()
                    if norm > tc.clip_norm:
                        step *= tc.clip_norm / norm
                try:
                    model = model.sgd_update(grads, step)
                except ValueError as exc:
                    raise TrainingDiverged(f"parameters became non-finite in epoch {epoch}") from exc
        curve.append(evaluate_loss(model, feats, tc.gate))
        if not np.isfinite(curve[-1]):
            raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
        log.info("epoch %d loss %.6g", epoch, curve[-1])
        if progress is not None:
            progress(epoch, curve[-1])
    return model, curve


def desk_dataset(tc: TrainConfig) -> list[dsp.Utterance]:
    return dsp.synth_dataset(tc.num_utterances, tc.seed, tc.snr_range, tc.seconds)


def enhance(
    model: EnhanceModel, noisy: dsp.AudioBuffer, gate: SelectGateConfig = SelectGateConfig()
) -> tuple[dsp.AudioBuffer, MacReport]:
    """STFT -> magnitude -> mask -> masked STFT -> overlap-add."""
    spec = dsp.stft(noisy, model.stft)
    mask, stats = forward(model, dsp.magnitude(spec), gate)
    out = dsp.istft(dsp.apply_mask(spec, mask))
    rep = measure(stats, model.frames_per_second, model.shape)
    return out, rep


# -- weight files -----------------------------------------------------------


class WeightFileError(ValueError):
    """Base class for weight-file problems."""


class MalformedWeightFile(WeightFileError):
    pass


class WeightVersionError(WeightFileError):
    pass


class WeightShapeError(WeightFileError):
    pass


def save(model: EnhanceModel, path: str | Path) -> None:
    """Write the versioned little-endian float32 weight file."""
    tensors = model.tensors()
    chunks = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedWeightFile(f"file truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path: str | Path) -> EnhanceModel:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise MalformedWeightFile(f"{path}: bad magic, not a DGRU weight file")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise WeightVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    (count,) = r.unpack("<I")
    tensors: dict[str, NDArray[np.float64]] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedWeightFile(f"{path}: tensor name is not UTF-8") from exc
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float64).reshape(dims)
        tensors[name] = arr
    if r.pos != len(r.data):
        raise MalformedWeightFile(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return _assemble(tensors)


def _assemble(tensors: dict[str, NDArray[np.float64]]) -> EnhanceModel:
    try:
        k = 0
        grus = []
        while f"gru{k + 1}.w_ir" in tensors:
            grus.append(GruWeights(**{n: tensors[f"gru{k + 1}.{n}"] for n in PARAM_NAMES}))
            k += 1
        return EnhanceModel(
            tensors["fc_in.weight"], tensors["fc_in.bias"], tuple(grus),
            tensors["fc_out.weight"], tensors["fc_out.bias"],
        )
    except KeyError as exc:
        raise WeightShapeError(f"weight file is missing tensor {exc.args[0]}") from exc
    except ValueError as exc:
        raise WeightShapeError(f"inconsistent tensor shapes: {exc}") from exc


def with_gate(cfg: EnhanceModelConfig, gate: SelectGateConfig) -> EnhanceModelConfig:
    return replace(cfg, gate=gate)
