"""Command-line entry point.

Exit codes: 0 success, 1 a ``check`` failed, 2 malformed input file,
3 SVD failure, 4 configuration error, 5 training diverged.
"""

import argparse
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import replace

import numpy as np

from . import formats as io
from . import model_grad as mg
from .errors import (
    ConfigError,
    ImaginaryResidueTooLarge,
    MalformedFile,
    SpecInvalid,
    SvdFailure,
    TrainingDiverged,
)
from .tensor_core import t_product, t_transpose
from .trainer import evaluate, sigma_noise_sweep, train
from .tsvd_lowrank import rotated_tnn, tensor_nuclear_norm, tsvd

EXIT_OK, EXIT_CHECK, EXIT_MALFORMED, EXIT_SVD, EXIT_CONFIG, EXIT_DIVERGED = range(6)

ABLATIONS = (
    ("base", False, False, False),
    ("+E", True, False, False),
    ("+E+T", True, True, False),
    ("+E+T+U", True, True, True),
)


def thread_limit():
    """Cap BLAS/LAPACK threads from ``T3_THREADS`` when it is set."""
    raw = os.environ.get("T3_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"T3_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("T3_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def max_orthogonality_error(u):
    """``max |U^T * U - I|`` under the t-product."""
    gram = t_product(t_transpose(u), u)
    eye = np.zeros_like(gram)
    eye[:, :, 0] = np.eye(gram.shape[0])
    return float(np.max(np.abs(gram - eye)))


# ---------------------------------------------------------------- commands

def cmd_tsvd(args):
    g = io.read_t3b(args.input)
    f = tsvd(g)
    err = float(np.max(np.abs(t_product(t_product(f.u, f.s), t_transpose(f.v)) - g)))
    # factors are computed in full before anything is written
    for tag, value in (("U", f.u), ("S", f.s), ("V", f.v)):
        io.write_t3b(f"{args.prefix}{tag}.t3b", value)
    print(f"max_reconstruction_error {err:.3e}")
    return EXIT_OK


def cmd_tnn(args):
    g = io.read_t3b(args.input)
    value = rotated_tnn(g) if args.rotate else tensor_nuclear_norm(g)
    print(repr(float(value)))
    return EXIT_OK


def cmd_check(args):
    status = EXIT_OK
    for path in args.inputs:
        err = max_orthogonality_error(io.read_t3b(path))
        ok = err < args.tol
        print(f"{path} orthogonality_error {err:.3e} {'ok' if ok else 'FAIL'}")
        status = status if ok else EXIT_CHECK
    return status


def _run_training(run, out_dir, embeddings=False):
    dataset = run.dataset()
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as fh:

        def on_record(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        state, records = train(run.train, dataset, on_record=on_record)

    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(io.format_config(run))
    io.save_params(os.path.join(out_dir, "model"), state.params)
    io.write_t3b(os.path.join(out_dir, "bank.t3b"), state.bank.protos)
    io.write_t3b(os.path.join(out_dir, "bank_valid.t3b"), io.as_t3(state.bank.valid.astype(float)))
    if state.g is not None:
        io.write_t3b(os.path.join(out_dir, "similarity.t3b"), state.g)
        io.write_t3b(os.path.join(out_dir, "aux.t3b"), state.aux)
    if embeddings:
        rows = []
        for m, d in enumerate(dataset.domains):
            feats = mg.forward(state.params, d.x).features
            rows += [[m, int(y), *map(repr, map(float, f))] for f, y in zip(feats, d.y)]
        header = ["domain", "label"] + [f"f{i}" for i in range(state.params.feat_dim)]
        io.write_csv(os.path.join(out_dir, "embeddings.csv"), header, rows)
    final = records[-1] if records else {}
    summary = {
        "iterations": len(records),
        "target_acc": evaluate(state.params, dataset.target.x, dataset.target.y).accuracy,
        "tnn_g": final.get("tnn_g"),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return state, dataset, summary


def _out_dir(run, args):
    return args.output_dir or run.output_dir


def cmd_train(args):
    run = io.load_config(args.config)
    _, _, summary = _run_training(run, _out_dir(run, args), embeddings=args.embeddings)
    print(f"target_acc {summary['target_acc']:.4f}")
    return EXIT_OK


def cmd_noise_sweep(args):
    run = io.load_config(args.config)
    if args.levels is not None:
        run = replace(run, noise_levels=tuple(args.levels)).validate()
    out = _out_dir(run, args)
    if args.model:
        params = io.load_params(args.model)
        dataset = run.dataset()
    else:
        state, dataset, _ = _run_training(run, out)
        params = state.params
    x = dataset.domains[run.sweep_domain].x
    rows = sigma_noise_sweep(params, x, run.noise_levels, run.noise_draws, seed=[run.dataset_seed, 3])
    os.makedirs(out, exist_ok=True)
    io.write_csv(
        os.path.join(out, "noise_sweep.csv"),
        ["r", "mean_sigma", "std_sigma"],
        [[repr(r), repr(m), repr(s)] for r, m, s in rows],
    )
    print("r,mean_sigma,std_sigma")
    for r, m, s in rows:
        print(f"{r},{m:.6f},{s:.6f}")
    return EXIT_OK


def cmd_ablate(args):
    run = io.load_config(args.config)
    out = _out_dir(run, args)
    rows = []
    for name, e, t, u in ABLATIONS:
        variant = replace(run, train=run.train.ablation(e, t, u))
        _, _, summary = _run_training(variant, os.path.join(out, name.replace("+", "plus_")))
        rows.append([name, repr(summary["target_acc"]), repr(summary["tnn_g"])])
        print(f"{name:8s} target_acc {summary['target_acc']:.4f} tnn_g {summary['tnn_g']:.4f}")
    io.write_csv(os.path.join(out, "ablation.csv"), ["variant", "target_acc", "tnn_g"], rows)
    return EXIT_OK


def cmd_gen_data(args):
    run = io.load_config(args.config)
    out = os.path.join(_out_dir(run, args), "data")
    dataset = run.dataset()
    os.makedirs(out, exist_ok=True)
    for m, d in enumerate(dataset.domains):
        name = "target" if m == len(dataset.sources) else f"source{m}"
        io.write_t3b(os.path.join(out, f"{name}.t3b"), io.as_t3(np.column_stack([d.x, d.y])))
        io.write_csv(os.path.join(out, f"{name}.csv"), io.domain_header(dataset.input_dim), io.domain_rows(d))
    print(f"wrote {len(dataset.domains)} domains to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="tsvdnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("tsvd", help="factor a T3B tensor into U, S, V")
    s.add_argument("input")
    s.add_argument("prefix", help="outputs go to <prefix>U.t3b, <prefix>S.t3b, <prefix>V.t3b")
    s.set_defaults(func=cmd_tsvd)

    s = sub.add_parser("tnn", help="print the tensor nuclear norm")
    s.add_argument("input")
    s.add_argument("--rotate", action="store_true", help="swap modes 2 and 3 first")
    s.set_defaults(func=cmd_tnn)

    s = sub.add_parser("check", help="check t-orthogonality of factor files")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(func=cmd_check)

    def with_config(name, func, help_text):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("config")
        s.add_argument("--output-dir", help="overrides output_dir from the config")
        s.set_defaults(func=func)
        return s

    s = with_config("train", cmd_train, "train one model")
    s.add_argument("--embeddings", action="store_true", help="also write embeddings.csv")
    s = with_config("noise-sweep", cmd_noise_sweep, "mean predicted sigma per input noise level")
    s.add_argument("--levels", type=lambda t: [float(v) for v in t.split(",")], help="e.g. 0,0.1,0.5,1")
    s.add_argument("--model", help="model directory from a previous train run")
    with_config("ablate", cmd_ablate, "train the four component ablations")
    with_config("gen-data", cmd_gen_data, "write the synthetic domains as T3B and CSV")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with thread_limit():
            return args.func(args)
    except MalformedFile as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (SvdFailure, ImaginaryResidueTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SVD
    except (ConfigError, SpecInvalid) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} ({len(exc.metrics)} iterations logged)", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
