import csv
import json

import numpy as np
import pytest

from nniva.cli import main
from nniva.density import init_weights, save_weights
from nniva.fileio import read_wav, write_wav
from nniva.sources import speech_like, write_synthetic_corpus


@pytest.fixture
def sources(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for i in range(3):
        p = tmp_path / f"src{i}.wav"
        write_wav(p, 16000, speech_like(1.5, 16000, rng))
        paths.append(str(p))
    return paths


def run(*argv):
    return main([str(a) for a in argv])


def test_mix_butterworth_outputs(tmp_path, sources):
    out = tmp_path / "mix"
    assert run("mix", "--system", "butterworth", "--sources", *sources[:2], "--out-dir", out) == 0
    wavs = sorted(p.name for p in out.glob("*.wav"))
    assert wavs == ["image_s0_m0.wav", "image_s0_m1.wav", "image_s1_m0.wav", "image_s1_m1.wav", "mix_m0.wav", "mix_m1.wav"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mixtures"] == ["mix_m0.wav", "mix_m1.wav"]
    _, m0 = read_wav(out / "mix_m0.wav")
    _, i00 = read_wav(out / "image_s0_m0.wav")
    _, i10 = read_wav(out / "image_s1_m0.wav")
    np.testing.assert_allclose(m0, i00 + i10, atol=1e-6)


def test_mix_random_taps_reproducible(tmp_path, sources):
    for d in ("a", "b"):
        assert run("mix", "--system", "random-taps", "--seed", 5, "--sources", *sources, "--out-dir", tmp_path / d) == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    run("mix", "--system", "random-taps", "--seed", 6, "--sources", *sources, "--out-dir", tmp_path / "c")
    assert (tmp_path / "a" / "mix_m0.wav").read_bytes() != (tmp_path / "c" / "mix_m0.wav").read_bytes()


def test_mix_butterworth_three_sources_fails(tmp_path, sources, capsys):
    out = tmp_path / "mix"
    assert run("mix", "--system", "butterworth", "--sources", *sources, "--out-dir", out) == 2
    assert "two sources" in capsys.readouterr().err
    assert not out.exists()


def test_separate_with_metrics_and_evaluate(tmp_path, sources):
    mixdir, sepdir = tmp_path / "mix", tmp_path / "sep"
    run("mix", "--system", "random-taps", "--seed", 1, "--sources", *sources[:2], "--out-dir", mixdir)
    assert run(
        "separate", "--manifest", mixdir / "manifest.json", "--frame-size", 256, "--hop", 80,
        "--mu0", 0.05, "--eval-every", 50, "--out-dir", sepdir,
    ) == 0
    rows = list(csv.DictReader(open(sepdir / "metrics.csv")))
    assert [int(r["frame"]) for r in rows][:3] == [0, 50, 100]
    assert list(rows[0]) == ["frame", "sir_0", "sir_1", "mean_sir", "coherence"]
    assert (sepdir / "sep_0.wav").exists() and (sepdir / "state.bin").exists()

    out_csv = tmp_path / "sir.csv"
    assert run("evaluate", "--metric", "sir", "--outputs", sepdir / "manifest.json",
               "--references", mixdir / "manifest.json", "--out", out_csv) == 0
    final = list(csv.DictReader(open(out_csv)))[0]
    assert float(final["mean_sir"]) == pytest.approx(float(rows[-1]["mean_sir"]), abs=1e-5)


def test_separate_batch(tmp_path, sources):
    mixdir = tmp_path / "mix"
    run("mix", "--system", "random-taps", "--seed", 1, "--sources", *sources[:2], "--out-dir", mixdir)
    assert run("separate", "--mode", "batch", "--epochs", 2, "--frame-size", 256, "--hop", 128,
               "--in", mixdir / "mix_m0.wav", mixdir / "mix_m1.wav", "--out-dir", tmp_path / "sep") == 0
    rate, y = read_wav(tmp_path / "sep" / "sep_1.wav")
    assert rate == 16000 and y.shape[0] == 1
    assert not (tmp_path / "sep" / "metrics.csv").exists()


def test_separate_batch_rnn_fails(tmp_path, sources):
    assert run("separate", "--mode", "batch", "--model", "rnn", "--in", *sources[:2], "--out-dir", tmp_path / "s") == 2


def test_separate_missing_weights_fails(tmp_path, sources):
    out = tmp_path / "s"
    assert run("separate", "--model", "fnn", "--in", *sources[:2], "--out-dir", out) == 2
    assert not out.exists()
    assert run("separate", "--model", "fnn", "--weights", tmp_path / "none.bin", "--in", *sources[:2], "--out-dir", out) == 2


def test_separate_neural_model(tmp_path, sources):
    w = tmp_path / "w.bin"
    save_weights(init_weights(129, 16, 4, np.random.default_rng(0)), w)
    assert run("separate", "--model", "rnn", "--weights", w, "--frame-size", 256, "--hop", 80,
               "--in", *sources[:2], "--out-dir", tmp_path / "s") == 0
    # recurrent weights with the feed-forward model name are refused
    assert run("separate", "--model", "fnn", "--weights", w, "--frame-size", 256, "--hop", 80,
               "--in", *sources[:2], "--out-dir", tmp_path / "t") == 2


def test_evaluate_coherence_identical(tmp_path, sources, capsys):
    assert run("evaluate", "--outputs", *sources[:2], "--references", sources[1], sources[0]) == 0
    row = list(csv.DictReader(capsys.readouterr().out.splitlines()))[0]
    assert float(row["coherence"]) == pytest.approx(1.0, abs=1e-6)
    assert (row["perm_0"], row["perm_1"]) == ("1", "0")


def test_evaluate_hf_emphasis_constant(tmp_path, capsys):
    for name in ("a", "b"):
        write_wav(tmp_path / f"{name}.wav", 16000, np.full(4000, 0.25))
    assert run("evaluate", "--hf-emphasis", "--outputs", tmp_path / "a.wav", "--references", tmp_path / "b.wav") == 0
    row = list(csv.DictReader(capsys.readouterr().out.splitlines()))[0]
    assert float(row["energy_db_0"]) == -160.0


def test_windows_check(capsys):
    assert run("windows-check", "--frame-size", 512, "--hop", 160) == 0
    assert "pr_residual=" in capsys.readouterr().out
    assert run("windows-check", "--frame-size", 500, "--hop", 160) == 2


def test_norm_bench(capsys):
    assert run("norm-bench", "--trials", 500) == 0
    out = capsys.readouterr().out
    assert "violations_exact_below_one=0 violations_cheap_below_exact=0" in out


def test_train_small(tmp_path, monkeypatch):
    write_synthetic_corpus(tmp_path / "corpus", n_files=2, duration=1.0, seed=0)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_sources = 2\ncoherence_window = 8\nframe_size = 16\nhop = 5\nwidth = 16\nbatch_size = 2\nmu0 = 0.5\n")
    monkeypatch.setenv("NNIVA_CORPUS", str(tmp_path / "corpus"))
    assert run("train", "--config", cfg, "--iterations", 2, "--out", tmp_path / "w.bin", "--log", tmp_path / "log.csv") == 0
    assert len((tmp_path / "log.csv").read_text().splitlines()) == 3
    monkeypatch.delenv("NNIVA_CORPUS")
    assert run("train", "--config", cfg, "--out", tmp_path / "x.bin") == 2


def test_rollback_removes_partial_outputs(tmp_path, sources):
    out = tmp_path / "sep"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    # a stereo input is rejected after the directory already existed
    stereo = tmp_path / "st.wav"
    write_wav(stereo, 16000, np.zeros((2, 1000)))
    assert run("separate", "--in", stereo, sources[0], "--out-dir", out) == 2
    assert sorted(p.name for p in out.iterdir()) == ["keep.txt"]


def test_rollback_after_writes(tmp_path, sources, monkeypatch):
    from nniva import separator
    from nniva.exceptions import NumericError

    def failing_save(state, path):
        raise NumericError("simulated failure")

    monkeypatch.setattr(separator, "save_state", failing_save)
    out = tmp_path / "sep"
    assert run("separate", "--frame-size", 256, "--hop", 128, "--in", *sources[:2], "--out-dir", out) == 2
    assert not out.exists()
