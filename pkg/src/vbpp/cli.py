"""Command-line front-end: simulate | fit | predict | evaluate | baseline.

Every command writes a manifest JSON beside its outputs echoing the fully
resolved configuration, and is deterministic given that manifest.  The
VBPP_THREADS environment variable caps BLAS worker counts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("VBPP_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def parse_domain(spec: str):
    """Parse 'lo1:hi1[,lo2:hi2,...]' into a Domain."""
    from .pointdata import Domain
    lo, hi = [], []
    for part in spec.split(","):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise argparse.ArgumentTypeError(f"bad domain component {part!r}, expected lo:hi")
        try:
            lo.append(float(pieces[0]))
            hi.append(float(pieces[1]))
        except ValueError:
            raise argparse.ArgumentTypeError(f"non-numeric domain component {part!r}")
    return Domain(lo=lo, hi=hi)


def _write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: str, command: str, config: dict) -> None:
    _write_json({"command": command, "config": config},
                os.path.join(out_dir, f"{command}_manifest.json"))


def _intensity_csv(path, grid, mean, lower, upper) -> None:
    import numpy as np
    with open(path, "w", encoding="utf-8") as fh:
        dims = grid.shape[1]
        fh.write(",".join([f"x{r}" for r in range(dims)] + ["mean", "lower", "upper"]) + "\n")
        for row in np.column_stack([grid, mean, lower, upper]):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_simulate(args) -> int:
    import numpy as np
    from .kernel import HyperParams
    from .pointdata import save_events
    from .simulate import ground_truth, save_ground_truth, thin_sample

    d = parse_domain(args.domain)
    alpha = [float(a) for a in args.alpha.split(",")] if args.alpha else \
        [(e / 5.0) ** 2 for e in d.extent]
    if args.link == "sigmoid" and args.lambda_star is None:
        print("error: --lambda-star is required for the sigmoid link", file=sys.stderr)
        return 2
    h = HyperParams(gamma=args.gamma, alpha=np.asarray(alpha))
    truth = ground_truth(h, d, link=args.link, lambda_star=args.lambda_star,
                         resolution=args.grid_res, seed=args.seed)
    events = thin_sample(truth, d, seed=args.seed)

    os.makedirs(args.out_dir, exist_ok=True)
    save_events(events, os.path.join(args.out_dir, "events.csv"))
    save_ground_truth(truth, os.path.join(args.out_dir, "truth.csv"))
    _write_manifest(args.out_dir, "simulate", {
        "domain": args.domain, "link": args.link, "lambda_star": args.lambda_star,
        "gamma": args.gamma, "alpha": alpha, "grid_res": args.grid_res,
        "seed": args.seed,
    })
    print(f"simulated {events.n} events "
          f"(integral of lambda = {truth.integrated_rate():.2f})")
    return 0


def _fit_config_from_args(args):
    from .optimizer import FitConfig
    return FitConfig(max_iters=args.max_iters, grad_tol=args.grad_tol,
                     optimize_z=args.optimize_z, use_map=args.map, seed=args.seed)


def cmd_fit(args) -> int:
    from .core import save_model
    from .optimizer import fit
    from .pointdata import load_events

    d = parse_domain(args.domain)
    events = load_events(args.data, d)
    inducing = args.inducing_per_dim if args.inducing_per_dim else args.inducing
    if d.dims > 1 and not args.inducing_per_dim:
        # --inducing M is a 1-D convenience; multi-D grids are specified per dim.
        inducing = args.inducing
    cfg = _fit_config_from_args(args)
    model = fit(events, d, inducing, cfg)

    os.makedirs(args.out_dir, exist_ok=True)
    save_model(model, os.path.join(args.out_dir, "model.json"))
    meta = model.fit_metadata
    with open(os.path.join(args.out_dir, "trace.csv"), "w", encoding="utf-8") as fh:
        fh.write("iteration,objective\n")
        for i, val in enumerate(meta["trace"]):
            fh.write(f"{i},{float(val)!r}\n")
    _write_manifest(args.out_dir, "fit", {
        "data": args.data, "domain": args.domain, "inducing": args.inducing,
        "inducing_per_dim": args.inducing_per_dim, "optimize_z": args.optimize_z,
        "max_iters": args.max_iters, "grad_tol": args.grad_tol,
        "map": args.map, "seed": args.seed,
    })
    print(f"fit: N={events.n}, M={model.num_inducing}, "
          f"objective={meta['objective']:.4f}, iterations={meta['iterations']}")
    return 0


def cmd_predict(args) -> int:
    import numpy as np
    from .core import load_model
    from .predictive import posterior_intensity
    from .simulate import make_grid

    model = load_model(args.model)
    grid, _ = make_grid(model.domain, args.grid_res)
    mean, lower, upper = posterior_intensity(model, grid)
    os.makedirs(args.out_dir, exist_ok=True)
    _intensity_csv(os.path.join(args.out_dir, "intensity.csv"), grid, mean, lower, upper)
    _write_manifest(args.out_dir, "predict", {
        "model": args.model, "grid_res": args.grid_res,
    })
    print(f"wrote intensity over {grid.shape[0]} grid points")
    return 0


def cmd_evaluate(args) -> int:
    from .baseline import fit_bandwidth, ks_log_predictive
    from .core import elbo, kl_qu_pu, load_model
    from .pointdata import load_events, split_events
    from .predictive import posterior_intensity, predictive_report
    from .simulate import make_grid

    model = load_model(args.model)
    d = model.domain
    train = None
    if args.test:
        test = load_events(args.test, d)
    elif args.data:
        events = load_events(args.data, d)
        train, test = split_events(events, args.split, args.split_seed)
    else:
        print("error: provide --test or --data with --split", file=sys.stderr)
        return 2

    report = predictive_report(model, test, n_samples=args.samples,
                               grid_res=args.grid_res, seed=args.seed)
    doc = report.to_dict()
    doc["n_test"] = test.n
    doc["elbo_plus_kl_on_test"] = elbo(model, test) + kl_qu_pu(model)

    if args.baseline:
        if train is None:
            if not args.train:
                print("error: --baseline needs --train or --data/--split", file=sys.stderr)
                return 2
            train = load_events(args.train, d)
        ks = fit_bandwidth(train, d, end_correction=not args.no_end_correction)
        doc["ks_log_predictive"] = ks_log_predictive(ks, test, d)
        doc["ks_sigma"] = ks.sigma.tolist()

    os.makedirs(args.out_dir, exist_ok=True)
    _write_json(doc, os.path.join(args.out_dir, "report.json"))
    grid, _ = make_grid(d, args.grid_res if d.dims > 1 else 512)
    mean, lower, upper = posterior_intensity(model, grid)
    _intensity_csv(os.path.join(args.out_dir, "intensity.csv"), grid, mean, lower, upper)
    _write_manifest(args.out_dir, "evaluate", {
        "model": args.model, "test": args.test, "data": args.data,
        "train": args.train, "split": args.split, "split_seed": args.split_seed,
        "samples": args.samples, "grid_res": args.grid_res, "seed": args.seed,
        "baseline": args.baseline, "no_end_correction": args.no_end_correction,
    })
    print(f"l_p={report.l_p:.4f} l_0={report.l_0:.4f} "
          f"m_p={report.m_p_hat:.4f}+-{report.m_p_stderr:.4f} "
          f"m_0={report.m_0_hat:.4f}+-{report.m_0_stderr:.4f}")
    return 0


def cmd_baseline(args) -> int:
    from .baseline import fit_bandwidth, loo_objective, save_ks_model
    from .pointdata import load_events

    d = parse_domain(args.domain)
    train = load_events(args.data, d)
    ks = fit_bandwidth(train, d, end_correction=not args.no_end_correction)
    os.makedirs(args.out_dir, exist_ok=True)
    save_ks_model(ks, os.path.join(args.out_dir, "ks_model.json"), train_ref=args.data)
    _write_manifest(args.out_dir, "baseline", {
        "data": args.data, "domain": args.domain,
        "no_end_correction": args.no_end_correction,
    })
    obj = loo_objective(train, ks.sigma, d, ks.end_correction)
    print(f"bandwidth sigma={ks.sigma.tolist()} (LOO objective {obj:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vbpp",
        description="Gaussian-process-modulated Poisson process intensity estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a ground-truth intensity and events")
    p.add_argument("--domain", required=True)
    p.add_argument("--link", choices=["square", "sigmoid"], default="square")
    p.add_argument("--lambda-star", type=float, default=None,
                   help="intensity scale, required for the sigmoid link")
    p.add_argument("--gamma", type=float, default=100.0)
    p.add_argument("--alpha", default=None, help="comma-separated per-dimension scales")
    p.add_argument("--grid-res", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the variational model")
    p.add_argument("--data", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--inducing", type=int, default=16, help="grid size (1-D)")
    p.add_argument("--inducing-per-dim", type=int, default=None)
    p.add_argument("--optimize-z", action="store_true")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--grad-tol", type=float, default=1e-5)
    p.add_argument("--map", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior intensity over a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid-res", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="held-out predictive bounds and MC estimates")
    p.add_argument("--model", required=True)
    p.add_argument("--test", default=None)
    p.add_argument("--data", default=None, help="single file to split into train/test")
    p.add_argument("--train", default=None, help="training events for --baseline")
    p.add_argument("--split", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--grid-res", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--no-end-correction", action="store_true")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="kernel-smoothing bandwidth fit")
    p.add_argument("--data", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--no-end-correction", action="store_true")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
