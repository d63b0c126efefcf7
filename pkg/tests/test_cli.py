import csv

import numpy as np
import pytest

from dgrnn import cli, dsp, model as M


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def kv(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "m.dgru"
    argv = ["train", "--out", str(path), "--epochs", "2", "--utterances", "6", "--seconds", "0.2",
            "--batch-size", "3", "--seed", "5"]
    assert cli.main(argv) == 0
    return d, path, argv


def test_train_writes_model_and_csv(trained):
    d, path, _ = trained
    assert M.load(path).hidden_dim == 32
    with (d / "m.loss.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "loss"]
    assert len(rows) == 4
    assert float(rows[-1][1]) < float(rows[1][1])


def test_train_is_byte_deterministic(trained, tmp_path):
    _, path, argv = trained
    other = tmp_path / "again.dgru"
    argv = list(argv)
    argv[argv.index("--out") + 1] = str(other)
    assert cli.main(argv) == 0
    assert other.read_bytes() == path.read_bytes()


def test_train_zero_lr_flat_curve(tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--out", str(tmp_path / "z.dgru"), "--epochs", "2", "--utterances", "2",
                       "--seconds", "0.1", "--lr", "0", "--format", "kv")
    assert code == 0
    vals = kv(out)
    assert vals["initial_loss"] == vals["final_loss"]


def test_train_bad_output_dir(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--out", str(tmp_path / "nope" / "m.dgru"))
    assert code == 1 and "does not exist" in err


@pytest.fixture
def noisy_wav(tmp_path):
    u = dsp.synth_utterance(np.random.default_rng(0), seconds=0.3, snr=0.0)
    path = tmp_path / "noisy.wav"
    dsp.write_wav(path, u.noisy)
    return path


def test_enhance_dense_and_full_top_a_byte_identical(trained, noisy_wav, tmp_path, capsys):
    _, model, _ = trained
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    assert run(capsys, "enhance", "--model", str(model), "--in", str(noisy_wav), "--out", str(a), "--gate", "dense")[0] == 0
    assert run(capsys, "enhance", "--model", str(model), "--in", str(noisy_wav), "--out", str(b), "--gate", "top-a", "--p", "100")[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_enhance_reports_gru_ratio(trained, noisy_wav, tmp_path, capsys):
    _, model, _ = trained
    code, out, _ = run(capsys, "enhance", "--model", str(model), "--in", str(noisy_wav), "--out",
                       str(tmp_path / "c.wav"), "--gate", "top-a", "--p", "50", "--format", "kv")
    assert code == 0
    vals = kv(out)
    assert round(float(vals["gru_matvec_ratio"]), 4) == 0.6667
    assert float(vals["mean_update_percent"]) == 50.0
    code, table, _ = run(capsys, "enhance", "--model", str(model), "--in", str(noisy_wav), "--out",
                         str(tmp_path / "c.wav"), "--gate", "top-a", "--p", "50")
    for key in vals:
        assert key in table


def test_enhance_errors(trained, noisy_wav, tmp_path, capsys):
    _, model, _ = trained
    code, _, err = run(capsys, "enhance", "--model", str(tmp_path / "missing"), "--in", str(noisy_wav), "--out", str(tmp_path / "o.wav"))
    assert code == 1 and "not found" in err
    import wave

    bad = tmp_path / "8k.wav"
    with wave.open(str(bad), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(b"\x00\x00" * 800)
    code, _, err = run(capsys, "enhance", "--model", str(model), "--in", str(bad), "--out", str(tmp_path / "o.wav"))
    assert code == 1 and "16000 Hz" in err


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["enhance", "--p", "150"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 1


def test_bench_table_and_kv(capsys):
    code, out, _ = run(capsys, "bench", "--frames", "3", "--format", "kv")
    assert code == 0
    vals = kv(out)
    assert float(vals["P100.percent_of_dense"]) == pytest.approx(100.0)
    assert float(vals["P25.percent_of_dense"]) == pytest.approx(53, abs=1.0)
    for p in (75, 50, 25):
        ratio = float(vals[f"P{p}.gru_macs_per_s"]) / float(vals["P100.gru_macs_per_s"])
        assert ratio == pytest.approx(float(vals[f"P{p}.dgru_scale"]))
    code, table, _ = run(capsys, "bench", "--frames", "3")
    assert code == 0
    for p in (100, 75, 50, 25):
        gru = float(vals[f"P{p}.gru_macs_per_s"]) / 1e6
        assert f"{gru:.2f}" in table


def test_oracle_green(capsys):
    code, out, _ = run(capsys, "oracle", "--quick")
    assert code == 0
    assert out.count("[PASS]") == 5


def test_oracle_catches_flipped_tie_break(capsys):
    code, out, err = run(capsys, "oracle", "--quick", "--inject", "tie-break")
    assert code == 2
    assert "[FAIL]" in out and "top-a-vs-sort" in err


@pytest.mark.slow
def test_oracle_seed_sweep(capsys):
    code, out, _ = run(capsys, "oracle", "--seeds", "10", "--quick")
    assert code == 0
    assert out.count("[PASS]") == 50
