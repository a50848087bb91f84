"""Command line entry point: ``dispvox {synth,perturb,train,register,eval,bench}``.

Failures exit nonzero after printing one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .estimators import CoherentPointDrift, DispVoxNetRegistration, NonRigidICP
from .pointset import (CorrespondencePair, add_sphere_outlier, add_uniform_noise,
                       fit_normalization, load_sequence, read_correspondences, read_points,
                       remove_chunk, rmse, split_dataset, synth_dataset, write_points)

EXT = {"ascii": ".txt", "binary": ".vxpt"}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, code=2)


def _fail(kind, message, code=1):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message)}) + "\n")
    sys.exit(code)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def cmd_synth(a):
    out = Path(a.output)
    out.mkdir(parents=True, exist_ok=True)
    states = synth_dataset(seed=a.seed, n_states=a.n_states, grid_res=a.grid_res)
    for t, ps in enumerate(states):
        write_points(ps, out / f"state_{t:04d}{EXT[a.format]}", format=a.format)
    print(f"wrote {len(states)} states of {len(states[0])} points to {out}")


def cmd_perturb(a):
    ps = read_points(a.input)
    if a.outlier is None and a.noise_ratio is None:
        raise CliError("nothing to do: pass --noise-ratio and/or --outlier")
    if a.outlier == "sphere":
        ps = add_sphere_outlier(ps, seed=a.seed)
    elif a.outlier == "chunk":
        ps, frac = remove_chunk(ps, seed=a.seed)
        logging.info("removed %.1f%% of the points", 100 * frac)
    if a.noise_ratio is not None:
        ps = add_uniform_noise(ps, a.noise_ratio, seed=a.seed)
    write_points(ps, a.output, format=a.format)


def _training_pairs(source, seed):
    states = synth_dataset(seed=seed) if source == "synthetic" else load_sequence(source)
    train, _ = split_dataset(states, seed=seed)
    return train


def cmd_train(a):
    est = DispVoxNetRegistration(q=a.q, lr=a.lr, de_iterations=a.de_iterations,
                                 refine_iterations=a.refine_iterations, seed=a.seed,
                                 plateau_window=a.plateau_window,
                                 checkpoint_interval=a.checkpoint_interval,
                                 checkpoint_dir=a.checkpoint_dir)
    est.fit(_training_pairs(a.data, a.seed))
    est.save(a.checkpoint)
    if a.log:
        est.de_log_.records.extend(est.refine_log_.records if est.refine_log_ else [])
        est.de_log_.to_csv(a.log)
    print(f"saved pipeline to {a.checkpoint}")


def _estimator(a):
    if a.method == "cpd":
        return CoherentPointDrift(beta=a.beta, lambda_=a.lambda_, w_outlier=a.w_outlier)
    if a.method == "nricp":
        return NonRigidICP()
    return evaluation.make_method(a.method, a.checkpoint)


def cmd_register(a):
    template, reference = read_points(a.template), read_points(a.reference)
    est = _estimator(a)
    deformed = est.register(template, reference)
    write_points(deformed, a.output, format=a.format)
    if a.trace and getattr(est, "trace_", None) is not None:
        with open(a.trace, "w") as fh:
            fh.write("iter,objective\n")
            for i, v in enumerate(est.trace_):
                fh.write(f"{i},{v!r}\n")
    if a.correspondences:
        gt = read_correspondences(a.correspondences)
        pair = CorrespondencePair(template, reference, gt)
        tf = fit_normalization(template.points, reference.points)
        print(f"rmse_input,{rmse(tf.apply(template.points), tf.apply(reference.points), pair.gt_map)!r}")
        print(f"rmse,{rmse(tf.apply(deformed.points), tf.apply(reference.points), pair.gt_map)!r}")


def cmd_eval(a):
    if a.outlier is not None and a.noise_ratio is not None:
        raise CliError("--noise-ratio and --outlier are mutually exclusive in eval")
    if a.outlier is not None:
        perturbation, levels = a.outlier, (0.0,)
    elif a.noise_ratio is not None:
        perturbation, levels = "noise", _floats(a.noise_ratio)
    else:
        perturbation, levels = "none", (0.0,)
    spec = evaluation.ExperimentSpec(source=a.data, n_pairs=a.n_pairs,
                                     methods=tuple(a.method.split(",")),
                                     perturbation=perturbation, levels=levels, target=a.target,
                                     seed=a.seed, filter_success=a.filter_success,
                                     checkpoint=a.checkpoint)
    table = evaluation.run_experiment(spec)
    if a.output:
        table.write(a.output, a.pairs_output)
    else:
        sys.stdout.write(table.table_csv())
        if a.pairs_output:
            Path(a.pairs_output).write_text(table.pairs_csv())


def cmd_bench(a):
    results = evaluation.bench_runtime(_ints(a.sizes), a.method, repeats=a.repeats, seed=a.seed,
                                       checkpoint=a.checkpoint)
    text = evaluation.bench_csv(results)
    if a.output:
        Path(a.output).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser():
    p = _Parser(prog="dispvox", description="Voxel displacement-field point set registration.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic deforming-sheet sequence")
    s.add_argument("output")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-states", type=int, default=100)
    s.add_argument("--grid-res", type=int, default=25)
    s.add_argument("--format", choices=("ascii", "binary"), default="ascii")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("perturb", help="add noise or an outlier structure to a point file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--noise-ratio", type=float)
    s.add_argument("--outlier", choices=("sphere", "chunk"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("ascii", "binary"), default="ascii")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("train", help="train a two-stage pipeline")
    s.add_argument("--data", default="synthetic", help="'synthetic' or a sequence directory")
    s.add_argument("--checkpoint", required=True, help="output pipeline file")
    s.add_argument("--q", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=3e-4)
    s.add_argument("--de-iterations", type=int, default=1500)
    s.add_argument("--refine-iterations", type=int, default=800)
    s.add_argument("--plateau-window", type=int, default=200)
    s.add_argument("--checkpoint-interval", type=int, default=0)
    s.add_argument("--checkpoint-dir")
    s.add_argument("--log", help="training loss CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("register", help="deform a template onto a reference")
    s.add_argument("template")
    s.add_argument("reference")
    s.add_argument("output")
    s.add_argument("--method", choices=evaluation.METHODS, default="dispvoxnet")
    s.add_argument("--checkpoint")
    s.add_argument("--format", choices=("ascii", "binary"), default="ascii")
    s.add_argument("--trace", help="write the baseline objective trace as CSV")
    s.add_argument("--correspondences", help="ground truth file; prints RMSE")
    s.add_argument("--beta", type=float, default=2.0)
    s.add_argument("--lambda", dest="lambda_", type=float, default=3.0)
    s.add_argument("--w-outlier", type=float, default=0.1)
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("eval", help="run an RMSE experiment over fixed pairs")
    s.add_argument("--data", default="synthetic")
    s.add_argument("--method", default="identity,cpd,nricp", help="comma separated")
    s.add_argument("--checkpoint")
    s.add_argument("--n-pairs", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-ratio", help="comma separated sweep, e.g. 0,0.25,0.5")
    s.add_argument("--outlier", choices=("sphere", "chunk"))
    s.add_argument("--target", choices=("template", "reference"), default="template")
    s.add_argument("--filter-success", action="store_true")
    s.add_argument("--output", help="table CSV (default stdout)")
    s.add_argument("--pairs-output", help="per-pair CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="runtime against point count")
    s.add_argument("--method", choices=evaluation.METHODS, default="cpd")
    s.add_argument("--sizes", default="1500,10000")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint")
    s.add_argument("--output")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        _fail(type(exc).__name__, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
