"""Command-line entry point: ``alrn {synth,train,eval,gradcheck,visualize}``.

Exit codes: 0 success, 2 configuration or format error, 3 numerical failure.
Machine-readable output (epoch logs, reports) goes to stdout as JSON; human
summaries go to stderr.
"""

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data_io import (
    FormatError,
    SpecError,
    ensure_dir,
    export_attention,
    generate_synthetic,
    load_dataset,
    read_tensor,
    save_dataset,
    write_tensor,
)
from .evaluator import GzslConfig, SplitSpec, predict_batch, report_from_predictions
from .model import ModelConfig, ParameterSet, init_parameters, model_forward
from .objective import STAGES, finite_diff_oracle, loss_and_grad, relative_error
from .presets import ABLATIONS, PRESETS, RunConfig, RunConfigError
from .trainer import ConfigError, NumericalError, train

logger = logging.getLogger("alrn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
GRADCHECK_TOL = 1e-4
GRADCHECK_FLOOR = 1e-7


def thread_cap():
    """Worker cap from ``ALRN_THREADS``, or None to leave the BLAS pool alone."""
    raw = os.environ.get("ALRN_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise RunConfigError(f"ALRN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise RunConfigError("ALRN_THREADS must be >= 1")
    return n


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(directory, params, model_cfg, extra=None):
    directory = ensure_dir(directory)
    names = []
    for name, value in params.items():
        write_tensor(directory / f"{name}.alrt", value)
        names.append(name)
    header = {"model": model_cfg.to_dict(), "parameters": names}
    if extra:
        header.update(extra)
    (directory / "checkpoint.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    try:
        header = json.loads((directory / "checkpoint.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint header in {directory}: {exc}") from None
    model_cfg = ModelConfig(**header["model"])
    tensors = {name: read_tensor(directory / f"{name}.alrt") for name in header["parameters"]}
    return ParameterSet(**tensors), model_cfg, header


# -- commands ---------------------------------------------------------------------

def _run_config(args):
    if args.config:
        cfg = RunConfig.load(args.config, preset=args.preset)
    else:
        cfg = RunConfig.from_dict({}, preset=args.preset)
    if getattr(args, "ablation", None):
        cfg.ablation = args.ablation
    if getattr(args, "seed", None) is not None:
        cfg.train["seed"] = args.seed
        cfg.synth["seed"] = args.seed
    return cfg


def _dataset(cfg, args):
    manifest = getattr(args, "manifest", None) or cfg.paths.get("manifest")
    if manifest:
        return load_dataset(manifest)
    return generate_synthetic(cfg.synth_spec())


def cmd_synth(args):
    cfg = _run_config(args)
    out = Path(args.out or cfg.paths.get("out") or "synth")
    ds = generate_synthetic(cfg.synth_spec())
    path = save_dataset(ds, out)
    counts = {tag: int((ds.splits == tag).sum()) for tag in np.unique(ds.splits)}
    print(f"wrote {len(ds.labels)} samples to {out} {counts}", file=sys.stderr)
    print(json.dumps({"manifest": str(path), "samples": len(ds.labels), "splits": counts}))
    return EXIT_OK


def cmd_train(args):
    cfg = _run_config(args)
    ds = _dataset(cfg, args)
    model_cfg = cfg.model_config(ds.semantics.shape[0], ds.features.shape[1])
    tcfg = cfg.train_config(model_cfg)
    tr = ds.train

    def emit(rec):
        print(json.dumps(rec.to_dict()), flush=True)

    t0 = time.perf_counter()
    params, log = train(tr.features, tr.labels, ds.semantics, ds.seen, tcfg, callback=emit)
    out = Path(args.out or cfg.paths.get("out") or "checkpoint")
    save_checkpoint(out, params, model_cfg, {
        "preset": cfg.preset, "ablation": cfg.ablation,
        "loss": {"tau": tcfg.loss_cfg.tau, "lam": tcfg.loss_cfg.lam},
        "gzsl": {"mu": cfg.gzsl_config().mu},
        "train": {k: getattr(tcfg, k) for k in ("n_pre", "epochs_total", "batches_per_epoch",
                                                 "n_way", "k_shot", "learning_rate",
                                                 "momentum", "weight_decay", "seed")},
    })
    print(f"trained {tcfg.epochs_total} epochs in {time.perf_counter() - t0:.1f}s; "
          f"loss {log.losses[0]:.4f} -> {log.losses[-1]:.4f}; checkpoint {out}", file=sys.stderr)
    return EXIT_OK


def parse_mu(text):
    """``"2.5"`` -> [2.5]; ``"0:5:0.5"`` -> [0, 0.5, ..., 5]."""
    if ":" not in text:
        return [float(text)]
    start, stop, step = (float(v) for v in text.split(":"))
    if step <= 0:
        raise RunConfigError("mu sweep step must be positive")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(n)]


def cmd_eval(args):
    cfg = _run_config(args)
    params, model_cfg, header = load_checkpoint(args.checkpoint)
    ds = _dataset(cfg, args)
    if ds.semantics.shape[0] != model_cfg.num_attributes:
        raise RunConfigError(
            f"checkpoint has {model_cfg.num_attributes} attributes, dataset has "
            f"{ds.semantics.shape[0]}")
    tau = header.get("loss", {}).get("tau", cfg.loss_config().tau)
    mus = parse_mu(args.mu) if args.mu is not None else [header.get("gzsl", {}).get("mu", cfg.gzsl_config().mu)]
    te = ds.test
    split = SplitSpec(ds.seen, ds.unseen)
    phi, revised = predict_batch(te.features, params, ds.semantics, model_cfg)
    for mu in mus:
        report = report_from_predictions(phi, revised, te.labels, split, GzslConfig(mu, tau),
                                         args.czsl_semantics, ds.semantics)
        doc = report.to_dict()
        if len(mus) > 1:
            doc["mu"] = mu
            doc["seen_predictions"] = report.seen_predictions
        print(json.dumps(doc, sort_keys=True))
        print(f"mu={mu:g}: T1={report.T1:.1f} S={report.S:.1f} U={report.U:.1f} H={report.H:.1f}",
              file=sys.stderr)
    return EXIT_OK


def gradcheck(model_cfg, loss_cfg, stage, seed, n_seen=3, batch=4, height=3, width=3, step=1e-5):
    """Compare analytic and central-difference gradients on a random instance.

    Returns ``{group: (max relative error, max absolute difference)}``, or
    ``None`` for a group frozen in this stage.
    """
    rng = np.random.default_rng(seed)
    params = init_parameters(model_cfg, rng)
    for _, value in params.items():
        value += rng.normal(scale=0.3, size=value.shape)
    n_classes = n_seen + 1
    S = rng.uniform(0.0, 1.0, size=(model_cfg.num_attributes, n_classes))
    x = rng.normal(size=(batch, model_cfg.in_channels, height, width))
    labels = rng.integers(0, n_seen, size=batch)
    seen = list(range(n_seen))
    _, analytic = loss_and_grad(x, labels, params, S, model_cfg, loss_cfg, stage, seen)
    numeric = finite_diff_oracle(x, labels, params, S, model_cfg, loss_cfg, step, stage, seen)
    out = {}
    for name, value in analytic.items():
        if name.startswith("adapter") and stage == "kernels_only":
            out[name] = None
        else:
            ref = getattr(numeric, name)
            out[name] = (relative_error(value, ref, GRADCHECK_FLOOR),
                         float(np.abs(value - ref).max(initial=0.0)))
    return out


def cmd_gradcheck(args):
    cfg = _run_config(args)
    body = dict(cfg.model)
    body.setdefault("num_attributes", 4)
    body.setdefault("feature_channels", 6)
    body.setdefault("adapter", "linear")
    model_cfg = ModelConfig(**body).with_ablation(cfg.ablation)
    loss_cfg = cfg.loss_config()
    stages = [args.stage.replace("-", "_")] if args.stage else list(STAGES)
    seed = cfg.train.get("seed", 0)
    ok = True
    for stage in stages:
        errors = gradcheck(model_cfg, loss_cfg, stage, seed)
        for name, res in errors.items():
            if res is None:
                line = f"{stage:13s} {name:10s} frozen (skipped)"
            else:
                err, diff = res
                passed = err < GRADCHECK_TOL
                ok &= passed
                line = (f"{stage:13s} {name:10s} max_rel_err={err:.3e} max_abs_diff={diff:.1e} "
                        f"{'PASS' if passed else 'FAIL'}")
            print(line)
    print("gradcheck " + ("passed" if ok else "FAILED"), file=sys.stderr)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_visualize(args):
    cfg = _run_config(args)
    params, model_cfg, _ = load_checkpoint(args.checkpoint)
    ds = _dataset(cfg, args)
    if not 0 <= args.sample < len(ds.labels):
        raise RunConfigError(f"sample {args.sample} out of range (0..{len(ds.labels) - 1})")
    trace, _ = model_forward(ds.features[args.sample], params, ds.semantics, model_cfg)
    if args.attributes == "all":
        attrs = list(range(model_cfg.num_attributes))
    else:
        attrs = [int(a) for a in args.attributes.split(",")]
    out = ensure_dir(args.out or cfg.paths.get("out") or "attention")
    written = []
    for a in attrs:
        path = out / f"sample{args.sample:05d}_attr{a:03d}.pgm"
        export_attention(trace.attention, a, path)
        written.append(str(path))
    print(json.dumps({"sample": args.sample, "files": written}))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="alrn", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--ablation", choices=ABLATIONS, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate the planted-attribute dataset")

    p = sub.add_parser("train", parents=[common], help="two-stage training")
    p.add_argument("--manifest", help="dataset manifest (default: generate from config)")

    p = sub.add_parser("eval", parents=[common], help="CZSL/GZSL evaluation of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--mu", help="calibration factor R or sweep START:STOP:STEP")
    p.add_argument("--czsl-semantics", choices=["revised", "raw"], default="revised",
                   help="class targets for unseen-only T1")

    p = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    p.add_argument("--stage", choices=["kernels-only", "end-to-end"], default=None)

    p = sub.add_parser("visualize", parents=[common], help="export attention maps as PGM")
    p.add_argument("checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--attributes", default="all", help="'all' or comma-separated indices")
    return parser


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "visualize": cmd_visualize}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=thread_cap()):
            return COMMANDS[args.command](args)
    except (RunConfigError, SpecError, FormatError, ConfigError, FileNotFoundError,
            IndexError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
