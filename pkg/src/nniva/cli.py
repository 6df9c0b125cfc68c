"""Command-line front end.

Subcommands: ``mix``, ``separate``, ``train``, ``evaluate``,
``windows-check`` and ``norm-bench``. Tabular output is CSV. Every command
removes the files it wrote when it fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import density, metrics, mixsim, separator, stft
from .exceptions import FormatError, NumericError, ParameterError
from .fileio import read_wav, write_wav

CORPUS_ENV = "NNIVA_CORPUS"
EVAL_TOLERANCE = 1e-10

log = logging.getLogger("nniva")


class _Outputs:
    """Tracks written files so a failed command can clean up after itself."""

    def __init__(self, out_dir: Path | None = None):
        self.out_dir = out_dir
        self.paths: list[Path] = []
        self.created_dir = False
        if out_dir is not None and not out_dir.exists():
            out_dir.mkdir(parents=True)
            self.created_dir = True

    def path(self, name) -> Path:
        p = Path(name) if self.out_dir is None else self.out_dir / name
        self.paths.append(p)
        return p

    def rollback(self):
        for p in self.paths:
            p.unlink(missing_ok=True)
        if self.created_dir:
            try:
                self.out_dir.rmdir()
            except OSError:
                pass


def _read_mono(paths) -> tuple[int, np.ndarray]:
    rate, signals = None, []
    for p in paths:
        r, x = read_wav(p)
        if x.shape[0] != 1:
            raise ParameterError(f"{p}: expected a mono file, found {x.shape[0]} channels")
        if rate is not None and r != rate:
            raise ParameterError(f"{p}: sample rate {r} differs from {rate}")
        rate = r
        signals.append(x[0])
    n = min(len(s) for s in signals)
    return rate, np.stack([s[:n] for s in signals])


def _write_csv(path, header, rows):
    fh = sys.stdout if path is None else open(path, "w", newline="")
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    finally:
        if path is not None:
            fh.close()


# -- mix ---------------------------------------------------------------------

def cmd_mix(args, out: _Outputs):
    rate, sources = _read_mono(args.sources)
    N = sources.shape[0]
    if args.system == "random-taps":
        system = mixsim.sample_random_system(N, np.random.default_rng(args.seed))
    elif args.system == "butterworth":
        if N != 2:
            raise ParameterError("the butterworth system mixes exactly two sources")
        system = mixsim.butterworth_system()
    else:
        if args.rir is None:
            raise ParameterError("--rir is required for --system rir")
        system = mixsim.load_rir_bank(args.rir)
        if system.n_sources != N or system.n_mics != N:
            raise ParameterError(f"RIR bank is {system.n_mics}x{system.n_sources}, got {N} sources")

    mixtures, images = mixsim.mix(system, sources)
    manifest = {"sample_rate": rate, "system": args.system, "seed": args.seed, "mixtures": [], "images": []}
    for m in range(system.n_mics):
        p = out.path(f"mix_m{m}.wav")
        write_wav(p, rate, mixtures[m])
        manifest["mixtures"].append(p.name)
    for n in range(N):
        row = []
        for m in range(system.n_mics):
            p = out.path(f"image_s{n}_m{m}.wav")
            write_wav(p, rate, images[n, m])
            row.append(p.name)
        manifest["images"].append(row)
    out.path("manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load_mix_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        manifest["mixtures"], manifest["images"]
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: not a mix manifest") from exc
    return manifest, path.parent


def _load_images(manifest, root) -> np.ndarray:
    rows = []
    for row in manifest["images"]:
        rows.append(_read_mono([root / name for name in row])[1])
    n = min(r.shape[1] for r in rows)
    return np.stack([r[:, :n] for r in rows])


# -- separate ----------------------------------------------------------------

def _load_model(args, n_bins):
    if args.model == "laplace":
        return density.LaplaceModel()
    if args.weights is None:
        raise ParameterError(f"--weights is required for the {args.model} model")
    w = density.load_weights(args.weights)
    if args.model == "fnn" and w.hidden_dim:
        raise ParameterError("weights are recurrent; use --model rnn")
    if args.model == "rnn" and not w.hidden_dim:
        raise ParameterError("weights are feed-forward; use --model fnn")
    if w.n_bins != n_bins:
        raise ParameterError(f"weights expect {w.n_bins} bins, STFT gives {n_bins}")
    return density.NeuralModel(w)


def _evaluation_row(index, W, images, windows, X_ref_spec, Y_spec):
    contrib = metrics.output_contributions(W, images, windows)
    sir_db, _ = metrics.sir(contrib)
    coh = metrics.coherence(Y_spec, X_ref_spec).value if X_ref_spec is not None else float("nan")
    return [index, *map(float, sir_db), float(np.mean(sir_db)), float(coh)]


def cmd_separate(args, out: _Outputs):
    if args.mode == "batch" and args.model == "rnn":
        raise ParameterError("recurrent density models cannot be used in batch mode")
    images = None
    if args.manifest is not None:
        manifest, root = _load_mix_manifest(args.manifest)
        rate, x = _read_mono([root / name for name in manifest["mixtures"]])
        images = _load_images(manifest, root)
    elif args.inputs:
        rate, x = _read_mono(args.inputs)
    else:
        raise ParameterError("give mixture files with --in or a mix manifest with --manifest")

    windows = stft.design_windows(args.frame_size, args.hop)
    X = stft.stft(x, windows, rate)
    model = _load_model(args, X.n_bins)
    N = X.n_channels
    ref = None
    if images is not None:
        # direct-path reference of source n: its image at microphone 0
        ref = stft.stft(images[:, 0, : x.shape[1]], windows, rate)

    rows = []
    if args.mode == "online":
        mu0 = 0.03 if args.mu0 is None else args.mu0
        Y, traj = separator.online_separate(
            X, model, separator.StepControl(mu0), record_every=args.eval_every if images is not None else None,
            resolve=True,
        )
        state = traj.final
        if images is not None:
            for frame, W in zip(traj.frames, traj.W):
                Yw = X.with_data(separator.apply_demixing(separator.resolve_scaling(W), X.data))
                rows.append(_evaluation_row(frame, W, images, windows, ref, Yw))
    else:
        control = separator.StepControl(
            0.1 if args.mu0 is None else args.mu0,
            0.01 if args.mu_end is None else args.mu_end,
            args.epochs,
        )
        W, _ = separator.batch_separate(X, model, control, args.epochs, args.iterations_per_epoch, seed=args.seed)
        state = separator.SeparationState(W, np.zeros((N, 0)), frame_index=X.n_frames)
        Y = X.with_data(separator.apply_demixing(separator.resolve_scaling(W), X.data))
    if images is not None:
        final = X.with_data(separator.apply_demixing(separator.resolve_scaling(state.W), X.data))
        rows.append(_evaluation_row(state.frame_index, state.W, images, windows, ref, final))

    y = stft.istft(Y, windows)
    names = []
    for n in range(N):
        p = out.path(f"sep_{n}.wav")
        write_wav(p, rate, y[n])
        names.append(p.name)
    separator.save_state(state, out.path("state.bin"))
    if rows:
        header = ["frame", *[f"sir_{n}" for n in range(N)], "mean_sir", "coherence"]
        _write_csv(out.path("metrics.csv"), header, rows)
    info = {
        "sample_rate": rate,
        "outputs": names,
        "state": "state.bin",
        "frame_size": args.frame_size,
        "hop": args.hop,
        "mode": args.mode,
        "model": args.model,
    }
    out.path("manifest.json").write_text(json.dumps(info, indent=2) + "\n")


# -- evaluate ----------------------------------------------------------------

def cmd_evaluate(args, out: _Outputs):
    csv_path = out.path(args.out) if args.out else None
    if args.metric == "coherence":
        rate, y = _read_mono(args.outputs)
        _, s = _read_mono(args.references)
        if y.shape[0] != s.shape[0]:
            raise ParameterError(f"{y.shape[0]} outputs but {s.shape[0]} references")
        n = min(y.shape[1], s.shape[1])
        y, s = y[:, :n], s[:, :n]
        if args.hf_emphasis:
            y, s = metrics.hf_emphasis(y)[:, 1:], metrics.hf_emphasis(s)[:, 1:]
        windows = stft.design_windows(args.frame_size, args.hop)
        rep = metrics.coherence(stft.stft(y, windows), stft.stft(s, windows))
        energies = [metrics.energy_db(ch) for ch in y]
        header = ["coherence", *[f"perm_{k}" for k in range(len(rep.permutation))], *[f"energy_db_{k}" for k in range(len(energies))]]
        _write_csv(csv_path, header, [[rep.value, *map(int, rep.permutation), *energies]])
        return

    if len(args.outputs) != 1 or len(args.references) != 1:
        raise ParameterError("--metric sir takes one separate manifest (--outputs) and one mix manifest (--references)")
    sep_path = Path(args.outputs[0])
    try:
        sep = json.loads(sep_path.read_text())
        state = separator.load_state(sep_path.parent / sep["state"])
        windows = stft.design_windows(sep["frame_size"], sep["hop"])
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"{sep_path}: not a separate manifest") from exc
    manifest, root = _load_mix_manifest(args.references[0])
    images = _load_images(manifest, root)
    contrib = metrics.output_contributions(state.W.astype(complex), images, windows)
    if args.hf_emphasis:
        contrib = metrics.hf_emphasis(contrib)[..., 1:]
    sir_db, perm = metrics.sir(contrib)
    header = ["frame", *[f"sir_{n}" for n in range(len(sir_db))], "mean_sir"]
    _write_csv(csv_path, header, [[state.frame_index, *map(float, sir_db), float(np.mean(sir_db))]])


# -- train -------------------------------------------------------------------

def cmd_train(args, out: _Outputs):
    from .sources import SourceCorpus
    from .trainer import TrainConfig, train

    corpus_dir = args.corpus or os.environ.get(CORPUS_ENV)
    if not corpus_dir:
        raise ParameterError(f"give --corpus or set {CORPUS_ENV}")
    overrides = {
        k: v
        for k, v in {
            "iterations": args.iterations,
            "batch_size": args.batch_size,
            "frame_size": args.frame_size,
            "hop": args.hop,
            "width": args.width,
            "seed": args.seed,
            "n_sources": args.n_sources,
            "recurrent": True if args.recurrent else None,
        }.items()
        if v is not None
    }
    config = TrainConfig.from_file(args.config, **overrides) if args.config else TrainConfig(**overrides)
    corpus = SourceCorpus.from_directory(corpus_dir)
    weights_path = out.path(args.out)
    log_path = out.path(args.log) if args.log else None
    train(config, corpus, log_path=log_path, checkpoint_path=weights_path)


# -- diagnostics -------------------------------------------------------------

def cmd_windows_check(args, out: _Outputs):
    windows = stft.design_windows(args.frame_size, args.hop)
    res = stft.pr_residual(windows)
    print(f"frame_size={args.frame_size} hop={args.hop} pr_residual={res:.3e}")
    if res >= EVAL_TOLERANCE:
        raise NumericError(f"perfect-reconstruction residual {res:.3e} exceeds {EVAL_TOLERANCE}")


def cmd_norm_bench(args, out: _Outputs):
    rng = np.random.default_rng(args.seed)
    below_one = cheap_below = scalar_below_one = 0
    max_rel_svd = 0.0
    ratios = []
    for _ in range(args.trials):
        N = int(rng.integers(1, args.max_n + 1))
        scale = 10.0 ** rng.uniform(-2, 1)
        a = scale * (rng.standard_normal(N) + 1j * rng.standard_normal(N))
        b = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / scale
        exact, cheap = separator.spectral_norm_rank1(a, b)
        svd = np.linalg.svd(np.eye(N) - np.outer(a, b.conj()), compute_uv=False)[0]
        max_rel_svd = max(max_rel_svd, abs(exact - svd) / svd)
        if N == 1:
            # 1x1: the norm is |1 - a conj(b)|, which may legitimately be < 1
            scalar_below_one += exact < 1.0 - 1e-12
        else:
            below_one += exact < 1.0 - 1e-12
        cheap_below += cheap < exact
        ratios.append(cheap / exact)
    ratios = np.array(ratios)
    print(f"trials={args.trials} max_rel_err_vs_svd={max_rel_svd:.3e}")
    print(f"violations_exact_below_one={int(below_one)} violations_cheap_below_exact={int(cheap_below)}")
    print(f"scalar_cases_below_one={int(scalar_below_one)} (N=1, not a violation)")
    print(f"cheap_over_exact mean={ratios.mean():.4f} max={ratios.max():.4f}")
    if below_one or cheap_below:
        raise NumericError("spectral norm property violated")


# -- wiring ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nniva", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="convolve mono sources into microphone mixtures")
    p.add_argument("--system", choices=["random-taps", "butterworth", "rir"], required=True)
    p.add_argument("--sources", nargs="+", required=True)
    p.add_argument("--rir", help="RIR bank file for --system rir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_mix, uses_dir=True)

    p = sub.add_parser("separate", help="online or batch IVA separation")
    p.add_argument("--mode", choices=["online", "batch"], default="online")
    p.add_argument("--model", choices=["laplace", "fnn", "rnn"], default="laplace")
    p.add_argument("--weights")
    p.add_argument("--mu0", type=float, help="normalized step (online default 0.03, batch start 0.1)")
    p.add_argument("--mu-end", type=float, help="batch: final-epoch step (default 0.01)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--iterations-per-epoch", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame-size", type=int, default=512)
    p.add_argument("--hop", type=int, default=160)
    p.add_argument("--eval-every", type=int, default=100, help="online: frames between metric rows")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--in", dest="inputs", nargs="+")
    src.add_argument("--manifest", help="manifest.json written by 'mix' (enables metrics)")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_separate, uses_dir=True)

    p = sub.add_parser("train", help="fit the neural density model")
    p.add_argument("--config")
    p.add_argument("--corpus", help=f"directory of mono WAVs (default ${CORPUS_ENV})")
    p.add_argument("--out", required=True, help="weight file")
    p.add_argument("--log", help="CSV of coherence per iteration")
    for name, typ in [("iterations", int), ("batch-size", int), ("frame-size", int), ("hop", int),
                      ("width", int), ("seed", int), ("n-sources", int)]:
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--recurrent", action="store_true")
    p.set_defaults(func=cmd_train, uses_dir=False)

    p = sub.add_parser("evaluate", help="coherence or SIR of separated outputs")
    p.add_argument("--outputs", nargs="+", required=True)
    p.add_argument("--references", nargs="+", required=True)
    p.add_argument("--metric", choices=["sir", "coherence"], default="coherence")
    p.add_argument("--hf-emphasis", action="store_true")
    p.add_argument("--frame-size", type=int, default=512)
    p.add_argument("--hop", type=int, default=160)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_evaluate, uses_dir=False)

    p = sub.add_parser("windows-check", help="print the perfect-reconstruction residual")
    p.add_argument("--frame-size", type=int, default=512)
    p.add_argument("--hop", type=int, default=160)
    p.set_defaults(func=cmd_windows_check, uses_dir=False)

    p = sub.add_parser("norm-bench", help="exact vs cheap spectral norm of I - a b^H")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--max-n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_norm_bench, uses_dir=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = _Outputs(args.out_dir if args.uses_dir else None)
    try:
        args.func(args, out)
    except (ParameterError, NumericError, FormatError, OSError) as exc:
        out.rollback()
        print(f"nniva {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except BaseException:
        out.rollback()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
