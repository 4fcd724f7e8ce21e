"""Command line entry point: ``dpvi {train,gen-data,accountant,bench}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import accountant


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _cmd_train(args) -> int:
    from .harness.experiments import ExperimentConfig, run_experiment

    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    doc["model"] = args.model
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.output is not None:
        doc["output"] = args.output
    cfg = ExperimentConfig.from_dict(doc)
    result = run_experiment(cfg)
    summary = {
        "model": cfg.model,
        "sigma": result.sigma if cfg.private else None,
        "final": [{k: v for k, v in r.items() if k != "wall_time"} for r in result.final],
        "output": cfg.output,
    }
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_gen_data(args) -> int:
    from .harness import data

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.model == "hlr":
        ds = data.gen_hlr_data(args.n, args.seed)
        data.write_records_csv(out / "train.csv", ds.x, ds.y, ds.l)
        data.write_records_csv(out / "test.csv", ds.x_test, ds.y_test, ds.l_test)
        data.write_matrix_csv(out / "groups.csv", ds.g)
    else:
        ds = data.gen_gmm_data(args.n, args.seed)
        data.write_records_csv(out / "train.csv", ds.x)
        data.write_records_csv(out / "test.csv", ds.x_test)
    (out / "generator.json").write_text(json.dumps({"version": ds.version, "n": args.n, "seed": args.seed}))
    print(str(out))
    return 0


def _grid_kwargs(args) -> dict:
    return {"L": args.L, "points": args.points, "refine": not args.no_refine}


def _cmd_accountant(args) -> int:
    if args.what == "eps":
        res = accountant.epsilon_details(args.sigma, args.q, args.iters, args.delta, **_grid_kwargs(args))
        doc = {"epsilon": res.epsilon, "grid_points": res.grid_points, "directions": res.directions}
    else:
        sigma = accountant.approximate_sigma(args.eps, args.delta, args.q, args.iters, **_grid_kwargs(args))
        res = accountant.epsilon_details(sigma, args.q, args.iters, args.delta, **_grid_kwargs(args))
        doc = {"sigma": sigma, "epsilon": res.epsilon, "grid_points": res.grid_points,
               "directions": res.directions}
    print(json.dumps(doc))
    return 0


def _write_rows(rows, columns, path) -> None:
    import csv

    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if path:
            fh.close()


def _cmd_bench(args) -> int:
    from .harness import bench

    if args.what == "sampler":
        rows = bench.bench_sampler(iterations=args.iters, seed=args.seed)
        _write_rows(rows, ["n", "B", "mean_iters", "p99_iters", "wall_time_ns"], args.output)
    else:
        rows = bench.bench_batch_size(iters=args.iters, seed=args.seed)
        _write_rows(rows, ["B", "mode", "mean", "stderr"], args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpvi", description="Differentially private variational inference")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run an experiment from a JSON config")
    t.add_argument("--model", required=True, choices=["logreg", "hlr", "gmm"])
    t.add_argument("--config", help="JSON file with ExperimentConfig fields")
    t.add_argument("--seed", type=_seed)
    t.add_argument("--output", help="CSV path (a .manifest.json is written next to it)")
    t.set_defaults(func=_cmd_train)

    g = sub.add_parser("gen-data", help="write a synthetic data set as CSV")
    g.add_argument("--model", choices=["hlr", "gmm"], default="hlr")
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--output", required=True, help="output directory")
    g.set_defaults(func=_cmd_gen_data)

    a = sub.add_parser("accountant", help="privacy accounting")
    asub = a.add_subparsers(dest="what", required=True)
    e = asub.add_parser("eps", help="epsilon for a noise multiplier")
    e.add_argument("--sigma", type=float, required=True)
    s = asub.add_parser("sigma", help="noise multiplier for a target epsilon")
    s.add_argument("--eps", type=float, required=True)
    for sp in (e, s):
        sp.add_argument("--q", type=float, required=True)
        sp.add_argument("--iters", type=int, required=True)
        sp.add_argument("--delta", type=float, required=True)
        sp.add_argument("--L", type=float, default=accountant.DEFAULT_L)
        sp.add_argument("--points", type=int, default=accountant.DEFAULT_POINTS)
        sp.add_argument("--no-refine", action="store_true")
    a.set_defaults(func=_cmd_accountant)

    b = sub.add_parser("bench", help="timing benchmarks (CSV)")
    b.add_argument("what", choices=["sampler", "batch-size"])
    b.add_argument("--iters", type=int, default=100)
    b.add_argument("--seed", type=_seed, default=0)
    b.add_argument("--output")
    b.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
