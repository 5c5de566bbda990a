"""Command-line interface.

Exit codes: 0 success, 1 internal error, 2 invalid input, 3 numerical
failure. Machine-readable output goes to standard output or files;
diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_INTERNAL, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _model_args(p: argparse.ArgumentParser, default: str = "granular") -> None:
    p.add_argument("--preset", default=default, choices=["kinetic-ou", "chain", "granular"])
    p.add_argument("--beta", type=float, default=None, help="granular: confinement strength")
    p.add_argument("--theta", type=float, default=None, help="granular: interaction strength")
    p.add_argument("--alpha", type=float, default=None, help="granular: noise Lipschitz constant")
    p.add_argument("--d", type=int, default=None, help="block dimension (kinetic-ou, granular)")


def _sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--N", type=int, default=1000, help="number of particles")
    p.add_argument("--h", type=float, default=1e-3, help="time step")
    p.add_argument("--T", type=float, default=1.0, help="horizon")
    p.add_argument("--t-grid", type=_floats, default=None,
                   help="comma-separated output times (default: 0 and T)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kel", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $KEL_THREADS or the CPU count)")
    parser.add_argument("--config", default=None, help="JSON file of option values")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="structural conditions and constants of a preset")
    _model_args(p)
    p.add_argument("--delta", type=float, default=0.5, help="dissipativity mixing weight")
    p.add_argument("--probes", type=int, default=10_000)

    p = sub.add_parser("gramian", help="weighted controllability Gramian")
    _model_args(p, "kinetic-ou")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--s", type=float, default=None, help="upper limit (default t)")
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--s-grid", type=_floats, default=None, help="fit the small-s scaling on this grid")

    p = sub.add_parser("simulate", help="Euler-Maruyama particle simulation")
    _model_args(p)
    _sim_args(p)
    p.add_argument("--start", type=_floats, default=None, help="point-mass start (default 0)")
    p.add_argument("--format", choices=["csv", "binary", "both"], default="csv")

    p = sub.add_parser("couple", help="synchronous coupling of two particle systems")
    _model_args(p)
    _sim_args(p)
    p.add_argument("--x-start", type=_floats, default=None)
    p.add_argument("--y-start", type=_floats, default=None)
    p.add_argument("--x-std", type=float, default=0.0, help="Gaussian spread around x-start")
    p.add_argument("--y-std", type=float, default=0.0, help="Gaussian spread around y-start")
    p.add_argument("--coupling", default="independent",
                   choices=["same-point", "independent", "comonotone-by-index", "optimal"])

    p = sub.add_parser("divergence", help="distance or divergence between two sample files")
    p.add_argument("--p", required=True, help="samples of P (.npy or comma-separated text)")
    p.add_argument("--q", required=True, help="samples of Q")
    p.add_argument("--estimator", default="exact",
                   choices=["exact", "sinkhorn", "knn", "dv", "gaussian"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("experiment", help="run a named experiment")
    p.add_argument("name", help="experiment name")
    p.add_argument("--params", default=None, help="JSON file of experiment parameters")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("selftest", help="run the acceptance checks")
    p.add_argument("--out", default="selftest-artifacts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", default=None, help="comma-separated criterion names or numbers")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    known = {a.dest for a in sub._actions} - {"help"}  # noqa: SLF001
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = set(cfg) - known - {"threads"}
    if unknown:
        raise ValidationError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    if "threads" in cfg:
        parser.set_defaults(threads=cfg.pop("threads"))
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def _threads(args) -> int:
    from .experiments import default_threads

    n = args.threads if args.threads is not None else default_threads()
    if n < 1:
        raise ValidationError("--threads must be positive")
    return n


def _model(args):
    from .model import preset

    params = {k: getattr(args, k) for k in ("beta", "theta", "alpha", "d")
              if getattr(args, k, None) is not None}
    if args.preset == "chain" and params:
        raise ValidationError("the chain preset takes no parameters")
    if args.preset == "kinetic-ou" and set(params) - {"d"}:
        raise ValidationError("kinetic-ou only takes --d")
    return preset(args.preset, **params)


def _emit(obj) -> None:
    from .experiments import _jsonable

    sys.stdout.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "threads")}


def _cmd_check(args) -> int:
    from .model import ProbePlan, condition_report

    model = _model(args)
    rep = condition_report(model, args.delta, ProbePlan(n_states=args.probes))
    _emit({"preset": args.preset, **rep.to_dict()})
    return EXIT_OK


def _cmd_gramian(args) -> int:
    from .gramian import gramian_Q, verify_gramian_scaling

    model = _model(args)
    s = args.t if args.s is None else args.s
    res = gramian_Q(model, args.t, s, args.nodes)
    out = {"preset": args.preset, "t": res.t, "s": res.s, "nodes": res.nodes, "Q": res.Q,
           "lambda_min": res.lambda_min}
    if args.s_grid:
        fit = verify_gramian_scaling(model, args.t, args.s_grid, args.nodes)
        out["scaling"] = {"slope": fit.slope, "expected_slope": fit.expected_slope, "c0": fit.c0,
                          "r2": fit.r2, "margins": fit.margins}
    _emit(out)
    return EXIT_OK


def _grid(args) -> list[float]:
    return list(args.t_grid) if args.t_grid else [0.0, args.T]


def _cmd_simulate(args) -> int:
    from .experiments import config_hash, version_string
    from .sde import simulate, write_snapshots_binary, write_snapshots_csv

    model = _model(args)
    start = np.zeros(model.dim) if args.start is None else np.asarray(args.start)
    snaps = simulate(model, start, args.N, args.h, _grid(args), args.seed, 0, _threads(args))
    cfg = _resolved(args)
    meta = {"version": version_string(), "config_hash": config_hash(cfg), "config": cfg}
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.format in ("csv", "both"):
        path = out / "snapshots.csv"
        write_snapshots_csv(path, snaps, model.d1,
                            f"version={meta['version']} config_hash={meta['config_hash']}")
        written.append(str(path))
    if args.format in ("binary", "both"):
        path = out / "snapshots.kel"
        write_snapshots_binary(path, snaps, model.d1, meta)
        written.append(str(path))
    _emit({"files": written, "config_hash": meta["config_hash"]})
    return EXIT_OK


def _cmd_couple(args) -> int:
    from .experiments import ExperimentReport, _gaussian_sampler
    from .sde import couple_simulate, coupled_init

    model = _model(args)
    xs = np.zeros(model.dim) if args.x_start is None else np.asarray(args.x_start)
    ys = np.zeros(model.dim) if args.y_start is None else np.asarray(args.y_start)
    init = coupled_init(_gaussian_sampler(xs, args.x_std), _gaussian_sampler(ys, args.y_std),
                        args.N, args.coupling, args.seed)
    snaps = couple_simulate(model, init, args.h, _grid(args), args.seed, 0, threads=_threads(args))
    rep = ExperimentReport("couple", _resolved(args), args.seed, _grid(args))
    for s in snaps:
        rep.add(s.time, "euclid_sq", s.mean_sq_diff)
        if s.metric is not None:
            rep.add(s.time, "psi_bar_sq", s.mean_psi_bar_sq)
    if args.out:
        paths = rep.write(args.out)
        _emit({"files": [str(p) for p in paths]})
    else:
        sys.stdout.write(rep.to_csv())
    return EXIT_OK


def _load_samples(path: str) -> np.ndarray:
    p = Path(path)
    try:
        arr = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read samples from {path}: {exc}") from None
    return np.atleast_2d(np.asarray(arr, dtype=float))


def _cmd_divergence(args) -> int:
    from .entropy import dv_lower_bound, knn_kl
    from .gaussian import GaussianState, gaussian_kl
    from .transport import w2_exact, w2_sinkhorn

    P, Q = _load_samples(args.p), _load_samples(args.q)
    if args.estimator == "exact":
        est = w2_exact(P, Q)
        est.metadata.pop("matching")
    elif args.estimator == "sinkhorn":
        est = w2_sinkhorn(P, Q, epsilon=args.epsilon)
    elif args.estimator == "knn":
        est = knn_kl(P, Q, k=args.k, seed=args.seed, threads=_threads(args))
    elif args.estimator == "dv":
        est = dv_lower_bound(P, Q, seed=args.seed)
    else:
        from .transport import DivergenceEstimate

        fit = [GaussianState(X.mean(0), np.atleast_2d(np.cov(X, rowvar=False))) for X in (P, Q)]
        est = DivergenceEstimate(gaussian_kl(*fit), "gaussian_closed_form",
                                 metadata={"note": "KL between moment-matched Gaussians"})
    _emit(est.to_dict())
    return EXIT_OK


def _cmd_experiment(args) -> int:
    from .experiments import run_experiment

    params = {}
    if args.params:
        try:
            params = json.loads(Path(args.params).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read parameters {args.params}: {exc}") from None
    if args.seed is not None:
        params["seed"] = args.seed
    params.pop("experiment", None)
    import inspect

    from .experiments import EXPERIMENTS

    if args.name in EXPERIMENTS and "threads" in inspect.signature(EXPERIMENTS[args.name]).parameters:
        params["threads"] = _threads(args)
    rep = run_experiment(args.name, params)
    if args.out:
        paths = rep.write(args.out, svg=args.svg)
        _emit({"files": [str(p) for p in paths], "passed": rep.passed})
    else:
        sys.stdout.write(rep.to_json())
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .selftest import format_table, run_selftest

    only = [s.strip() for s in args.only.split(",")] if args.only else None
    print(format_table([]), flush=True)
    results = run_selftest(args.out, args.seed, _threads(args), only,
                           log=lambda line: print(line, flush=True))
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} passed; artifacts in {args.out}", flush=True)
    return EXIT_OK if n_pass == len(results) else EXIT_NUMERICAL


COMMANDS = {
    "check": _cmd_check,
    "gramian": _cmd_gramian,
    "simulate": _cmd_simulate,
    "couple": _cmd_couple,
    "divergence": _cmd_divergence,
    "experiment": _cmd_experiment,
    "selftest": _cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
