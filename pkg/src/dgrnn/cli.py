"""Command-line entry point: ``dgrnn {train,enhance,bench,oracle}``.

Exit codes: 0 success, 1 usage or input error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from dgrnn import dsp, macmodel, model as M, oracle
from dgrnn.dgru import GateMode, SelectGateConfig

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2

log = logging.getLogger("dgrnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which is reserved
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _percent(text: str) -> float:
    p = float(text)
    if not 0.0 <= p <= 100.0:
        raise argparse.ArgumentTypeError("update percentage must lie in [0, 100]")
    return p


def _add_gate_args(p: argparse.ArgumentParser, default: str = "dense") -> None:
    p.add_argument("--gate", choices=[m.value for m in GateMode], default=default)
    p.add_argument("--p", dest="update_percent", type=_percent, default=100.0, help="update percentage for top-a")
    p.add_argument("--threshold", type=float, default=None, help="threshold for the threshold gate (default 0.5)")


def _gate(args) -> SelectGateConfig:
    mode = GateMode(args.gate)
    if mode is GateMode.TOP_A:
        return SelectGateConfig.top_a(args.update_percent)
    if mode is GateMode.THRESHOLD:
        return SelectGateConfig.threshold(None if args.threshold is None else [args.threshold])
    return SelectGateConfig.dense()


def _emit(rows: list[tuple[str, object]], fmt: str, out=None) -> None:
    out = out or sys.stdout
    if fmt == "kv":
        for k, v in rows:
            print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}", file=out)
    else:
        width = max(len(k) for k, _ in rows)
        for k, v in rows:
            val = f"{v:.6g}" if isinstance(v, float) else str(v)
            print(f"{k:<{width}}  {val}", file=out)


def cmd_train(args) -> int:
    out = Path(args.out)
    if not out.parent.exists():
        raise UsageError(f"output directory {out.parent} does not exist")
    cfg = M.EnhanceModelConfig(args.features, args.hidden, 2, seed=args.seed)
    tc = M.TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        num_utterances=args.utterances,
        seconds=args.seconds,
        seed=args.seed,
        gate=_gate(args),
        clip_norm=args.clip if args.clip and args.clip > 0 else None,
    )
    model = M.EnhanceModel.init(cfg)
    data = M.featurize(M.desk_dataset(tc), cfg.stft)
    trained, curve = M.train(model, data, tc, progress=lambda e, l: log.info("epoch %d: loss %.6f", e, l))
    M.save(trained, out)
    csv_path = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(curve):
            w.writerow([epoch, repr(loss)])
    _emit([("model", str(out)), ("loss_csv", str(csv_path)), ("initial_loss", curve[0]), ("final_loss", curve[-1])], args.format)
    return EXIT_OK


def cmd_enhance(args) -> int:
    if not Path(args.model).is_file():
        raise UsageError(f"model file {args.model} not found")
    model = M.load(args.model)
    noisy = dsp.read_wav(args.input)
    gate = _gate(args)
    enhanced, rep = M.enhance(model, noisy, gate)
    dsp.write_wav(args.output, enhanced)
    rows = [(k, float(v)) for k, v in rep.as_dict().items()]
    _emit([("output", args.output), ("gate", gate.mode.value)] + rows, args.format)
    return EXIT_OK


def cmd_bench(args) -> int:
    rows: list[tuple[str, macmodel.MacReport]] = []
    for p in (100, 75, 50, 25):
        cfg = SelectGateConfig.dense() if p == 100 else SelectGateConfig.top_a(p)
        rows.append((f"P={p}", macmodel.report(macmodel.FULL_SHAPE, cfg)))

    rng = np.random.default_rng(args.seed)
    full = M.EnhanceModel.init(M.EnhanceModelConfig(seed=args.seed))
    frames = rng.uniform(0, 1, (args.frames, full.feature_dim))
    timings = {}
    for label, rep in rows:
        p = float(label[2:])
        cfg = SelectGateConfig.dense() if p == 100 else SelectGateConfig.top_a(p)
        t0 = time.perf_counter()
        M.forward(full, frames, cfg)
        timings[label] = (time.perf_counter() - t0) / args.frames

    if args.format == "kv":
        for label, rep in rows:
            key = label.replace("=", "")
            for k, v in rep.as_dict().items():
                if not k.startswith("layer."):
                    print(f"{key}.{k}={v!r}")
            print(f"{key}.dgru_scale={macmodel.dgru_scale(float(label[2:]))!r}")
            print(f"{key}.seconds_per_frame={timings[label]!r}")
    else:
        print("GRU model, F=161, J=320, 2 GRU layers, 100 frames/s (MAC rates in M/s)")
        print(macmodel.format_table(rows))
        print()
        for label, _ in rows:
            print(f"{label:<8} scale {macmodel.dgru_scale(float(label[2:])):.4f}  "
                  f"wall clock {1e3 * timings[label]:.3f} ms/frame")
    return EXIT_OK


def cmd_oracle(args) -> int:
    selector = oracle.flipped_tie_selector if args.inject == "tie-break" else oracle.select_top_a
    failed = []
    for seed in range(args.seed, args.seed + args.seeds):
        for res in oracle.run_all(seed, selector, quick=args.quick):
            status = "PASS" if res.passed else "FAIL"
            print(f"[{status}] seed={seed} {res.name}: {res.detail}")
            if not res.passed:
                failed.append(res.name)
    if failed:
        print(f"verification failed: {', '.join(sorted(set(failed)))}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgrnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the desk-scale enhancement model on synthetic data")
    p.add_argument("--out", default="model.dgru")
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=M.TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=int, default=M.TrainConfig.batch_size)
    p.add_argument("--clip", type=float, default=M.TrainConfig.clip_norm, help="global gradient-norm clip; 0 disables")
    p.add_argument("--utterances", type=int, default=200)
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--features", type=int, default=33)
    p.add_argument("--seed", type=int, default=0)
    _add_gate_args(p)
    p.add_argument("--format", choices=["table", "kv"], default="table")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a 16 kHz mono WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    _add_gate_args(p)
    p.add_argument("--format", choices=["table", "kv"], default="table")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("bench", help="MAC table for the full-size (F=161, J=320) GRU model plus wall-clock timing")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["table", "kv"], default="table")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="run the brute-force verification suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to sweep")
    p.add_argument("--quick", action="store_true", help="smaller trial counts")
    p.add_argument("--inject", choices=["tie-break"], default=None, help="run against a deliberately broken component")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, dsp.AudioFormatError, M.WeightFileError, FileNotFoundError, ValueError) as exc:
        print(f"dgrnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
