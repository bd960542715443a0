"""Command-line interface.

Subcommands: ``monitor``, ``ate``, ``region``, ``power``, ``simulate`` and
``checkpoint``. Any long option can also be given in a flat ``key = value``
config file passed with ``--config``; command-line values win. The default
simulation seed comes from ``AVLM_SEED``.

Exit codes: 0 no rejection (or success), 10 null rejected, 2 input error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from avlm import __version__
from avlm.asymptotic import AteConfig, asymptotic_region, lambda_recommend
from avlm.dgp import AlternatingDesign, BootstrapEmpirical, NonlinearModel
from avlm.io import (CheckpointError, InputError, Schema, TrajectoryWriter, fmt,
                     ingest, load_checkpoint, load_config, read_records, save_checkpoint,
                     write_samples_csv, write_summary_csv)
from avlm.monitor import MONITOR_METHODS, AteMonitor, Monitor
from avlm.power import fixed_n_sample_size, rejection_prob_at_n
from avlm.regression import SufficientStats, snapshot, update
from avlm.sequential import MixtureSpec, confidence_region_F, ellipsoid_F
from avlm.simulation import METHODS, ecdf_summary, simulate_stopping_times, stopping_time_stats

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_REJECT = 10
SEED_ENV = "AVLM_SEED"


def names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def floats(text: str) -> list[float]:
    try:
        return [float(t) for t in names(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def boolean(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------- parser

def _data_options(p: argparse.ArgumentParser, z_required: bool = True):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="input file (CSV with header or NDJSON); '-' for stdin")
    g.add_argument("--format", choices=("csv", "ndjson"), help="input format (default: by extension)")
    g.add_argument("--y", default="y", help="outcome column")
    g.add_argument("--x", type=names, default=[], help="comma-separated nuisance columns")
    if z_required:
        g.add_argument("--z", type=names, default=[], help="comma-separated tested columns")
    g.add_argument("--intercept", action="store_true", help="prepend a constant nuisance column")


def _mixture_options(p: argparse.ArgumentParser):
    g = p.add_argument_group("mixture")
    g.add_argument("--phi", type=float, help="mixture precision (times the identity)")
    g.add_argument("--xi-mde", type=float, help="standardised minimum detectable effect; phi = xi^-2")
    g.add_argument("--zeta", type=float, help="prior precision of the effect; phi = zeta")
    g.add_argument("--lambda", dest="lam", type=float, help="prior sample size; Phi = lambda * Omega")
    g.add_argument("--omega", type=floats, help="Omega as a row-major comma list (with --lambda)")
    g.add_argument("--rho", type=float, help="treatment probability; Omega = rho(1-rho) I (with --lambda)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file supplying option defaults")

    parser = argparse.ArgumentParser(prog="avlm", description="Anytime-valid inference for linear models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    m = sub.add_parser("monitor", parents=[common], help="sequential test and confidence sequence on a stream")
    _data_options(m)
    _mixture_options(m)
    m.add_argument("--alpha", type=float, default=0.05)
    m.add_argument("--delta0", type=floats, help="null value (default 0)")
    m.add_argument("--method", choices=MONITOR_METHODS, default="exact")
    m.add_argument("--out", default="-", help="trajectory CSV (default stdout)")
    m.add_argument("--checkpoint-out", help="write the final state here")
    m.add_argument("--resume", help="continue from this checkpoint")

    a = sub.add_parser("ate", parents=[common], help="regression-adjusted ATE confidence sequence")
    a.add_argument("--data")
    a.add_argument("--format", choices=("csv", "ndjson"))
    a.add_argument("--y", default="y")
    a.add_argument("--treatment", default="treatment", help="0/1 assignment column")
    a.add_argument("--covariates", type=names, default=[], help="comma-separated covariate columns")
    a.add_argument("--rho", type=float, help="treatment probability")
    a.add_argument("--lambda", dest="lam", type=float)
    a.add_argument("--sigma-pre", type=float, help="pre-period outcome SD, for the default lambda")
    a.add_argument("--tau-mde", type=float, help="absolute minimum detectable effect, for the default lambda")
    a.add_argument("--estimator", choices=("auto", "model_s2", "hc0"), default="auto")
    a.add_argument("--interactions", action="store_true", help="add centred treatment-covariate interactions")
    a.add_argument("--mu", type=floats, help="known covariate means for interaction centring")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--delta0", type=float, default=0.0, help="null ATE")
    a.add_argument("--out", default="-")
    a.add_argument("--checkpoint-out")
    a.add_argument("--resume")

    r = sub.add_parser("region", parents=[common], help="confidence ellipsoid at the final n (JSON)")
    _data_options(r)
    _mixture_options(r)
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--method", choices=("exact", "plugin"), default="exact")
    r.add_argument("--out", default="-")

    pw = sub.add_parser("power", parents=[common], help="fixed-n sample size or anytime rejection bound")
    pw.add_argument("--alpha", type=float, default=0.05)
    pw.add_argument("--power", type=float, default=0.8, help="target power")
    pw.add_argument("--xi", type=float, help="standardised minimum detectable effect")
    pw.add_argument("--n", type=int, help="report the anytime-valid rejection bound at this n instead")
    pw.add_argument("--xi-true", type=float, help="true standardised effect for --n (default --xi)")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo stopping times")
    s.add_argument("--dgp", choices=("alternating", "nonlinear", "bootstrap"), default="nonlinear")
    s.add_argument("--methods", type=names, help=f"comma list from {METHODS}")
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--seed", type=int, help=f"base seed (default ${SEED_ENV} or 0)")
    s.add_argument("--nmax", type=int, default=10000)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--phi", type=float)
    s.add_argument("--xi-mde", type=float)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--sigma2", type=float, default=1.5)
    s.add_argument("--rho", type=float, default=0.5)
    s.add_argument("--control", help="CSV sample for the control arm (bootstrap)")
    s.add_argument("--treatment-sample", help="CSV sample for the treatment arm (bootstrap)")
    s.add_argument("--sample-y", default="y", help="outcome column in the bootstrap samples")
    s.add_argument("--sample-pre", default="pre", help="pre-period column in the bootstrap samples")
    s.add_argument("--mode", choices=("ab", "aa"), default="ab")
    s.add_argument("--use-pre", action="store_true")
    s.add_argument("--out", help="ECDF summary CSV")
    s.add_argument("--samples-out", help="per-replication CSV")

    c = sub.add_parser("checkpoint", parents=[common], help="inspect or re-save a checkpoint")
    c.add_argument("path")
    c.add_argument("--resave", help="write the loaded checkpoint back out here")
    return parser


def _apply_config(sub: argparse.ArgumentParser, cfg: dict[str, str]):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cfg.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise InputError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = boolean(raw)
            continue
        try:
            val = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise InputError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and val not in action.choices:
            raise InputError(f"config key {key!r}: {val!r} not in {sorted(action.choices)}")
        defaults[key] = val
    sub.set_defaults(**defaults)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        raise InputError("no command given")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        _apply_config(subparsers.choices[args.command], cfg)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------- helpers

@contextlib.contextmanager
def _output(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _mixture(args, d: int, required: bool = True) -> Optional[MixtureSpec]:
    given = [k for k in ("phi", "xi_mde", "zeta", "lam") if getattr(args, k, None) is not None]
    if len(given) > 1:
        raise InputError("give only one of --phi, --xi-mde, --zeta, --lambda")
    if not given:
        if required:
            raise InputError("a mixture is needed: --phi, --xi-mde, --zeta or --lambda")
        return None
    try:
        if given[0] == "phi":
            return MixtureSpec.general(args.phi * np.eye(d))
        if given[0] == "xi_mde":
            return MixtureSpec.from_mde(args.xi_mde, d)
        if given[0] == "zeta":
            return MixtureSpec.from_bayes(args.zeta, d)
        if args.omega is not None:
            if args.rho is not None:
                raise InputError("give --omega or --rho, not both")
            if len(args.omega) != d * d:
                raise InputError(f"--omega needs {d * d} entries")
            omega = np.array(args.omega).reshape(d, d)
        elif args.rho is not None:
            if not 0 < args.rho < 1:
                raise InputError("--rho must lie in (0, 1)")
            omega = args.rho * (1 - args.rho) * np.eye(d)
        else:
            raise InputError("--lambda needs --omega or --rho")
        return MixtureSpec.scaled_omega(args.lam, omega)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _schema(args) -> Schema:
    if not args.z:
        raise InputError("--z must name at least one column")
    return Schema(y=args.y, x=tuple(args.x), z=tuple(args.z), intercept=args.intercept)


def _require(args, *keys):
    for k in keys:
        if getattr(args, k, None) is None:
            raise InputError(f"--{k.replace('_', '-')} is required")


def _verdict(rejected: bool, n: int, tau: Optional[int], p_min: float) -> int:
    word = "reject" if rejected else "no-reject"
    print(f"verdict={word} n={n} tau={tau if tau is not None else 'NA'} p_running_min={fmt(p_min)}",
          file=sys.stderr)
    return EXIT_REJECT if rejected else EXIT_OK


# ---------------------------------------------------------------- commands

def cmd_monitor(args) -> int:
    _require(args, "data")
    if args.resume:
        ck = load_checkpoint(args.resume)
        try:
            mon = Monitor.from_checkpoint(ck)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        p, d = mon.p, mon.d
    else:
        schema = _schema(args)
        d = len(schema.z)
        p = len(schema.x) + (1 if schema.intercept else 0)
        if args.method == "g" and args.omega is None and args.rho is None:
            # the g statistic needs only lambda
            if args.lam is None:
                raise InputError("method 'g' needs --lambda")
            mix, lam = None, args.lam
        else:
            mix = _mixture(args, d)
            lam = None
        try:
            mon = Monitor(p, d, args.alpha, args.method, mix, args.delta0, lam=lam)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    schema = _schema(args)
    written = 0
    with _output(args.out) as fh:
        writer = TrajectoryWriter(fh, d)
        for pt in ingest(args.data, schema, args.format):
            if pt.x.size != p or pt.z.size != d:
                raise InputError(f"row dimensions (p={pt.x.size}, d={pt.z.size}) do not match state (p={p}, d={d})")
            row = mon.push(pt)
            if row is not None:
                writer.write(row)
                written += 1
    if mon.stats.n == 0:
        raise InputError("no observations")
    if args.checkpoint_out:
        save_checkpoint(args.checkpoint_out, mon.checkpoint())
    return _verdict(mon.test.rejected, mon.stats.n, mon.tau, mon.test.p_running_min)


def cmd_ate(args) -> int:
    _require(args, "data")
    if args.resume:
        try:
            mon = AteMonitor.from_checkpoint(load_checkpoint(args.resume))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        _require(args, "rho")
        if not 0.0 < args.alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {args.alpha}")
        lam = args.lam
        try:
            if lam is None:
                if args.sigma_pre is None or args.tau_mde is None:
                    raise InputError("give --lambda, or --sigma-pre and --tau-mde to derive it")
                lam = lambda_recommend(args.sigma_pre, args.tau_mde, args.rho)
            cfg = AteConfig(args.rho, lam, None if args.estimator == "auto" else args.estimator,
                            args.mu, args.interactions)
            mon = AteMonitor(cfg, args.alpha, len(args.covariates), args.delta0)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if len(args.covariates) != mon.n_covariates:
        raise InputError(f"checkpoint expects {mon.n_covariates} covariates, got {len(args.covariates)}")
    schema = Schema(y=args.y, x=tuple(args.covariates), treatment=args.treatment)
    with _output(args.out) as fh:
        writer = TrajectoryWriter(fh, 1)
        for rec in read_records(args.data, schema, args.format):
            if rec.treatment not in (0.0, 1.0):
                raise InputError(f"line {rec.line}: treatment must be 0 or 1, got {rec.treatment!r}")
            row = mon.push(rec.x, rec.treatment, rec.y)
            if row is not None:
                writer.write(row)
    if mon.stats.n == 0:
        raise InputError("no observations")
    if args.checkpoint_out:
        save_checkpoint(args.checkpoint_out, mon.checkpoint())
    return _verdict(mon.test.rejected, mon.stats.n, mon.tau, mon.test.p_running_min)


def cmd_region(args) -> int:
    _require(args, "data")
    schema = _schema(args)
    d = len(schema.z)
    p = len(schema.x) + (1 if schema.intercept else 0)
    mix = _mixture(args, d)
    stats = SufficientStats(p, d)
    for pt in ingest(args.data, schema, args.format):
        update(stats, pt)
    if stats.n == 0:
        raise InputError("no observations")
    snap = snapshot(stats)
    try:
        if args.method == "exact":
            reg = ellipsoid_F(snap, mix, args.alpha)
        else:
            reg = asymptotic_region(snap, mix, args.alpha)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    lo, hi = reg.bounds()
    out = {
        "n": stats.n,
        "full_rank": snap.full_rank,
        "kind": reg.kind,
        "alpha": fmt(args.alpha),
        "center": [fmt(v) for v in reg.center],
        "shape": None if reg.shape is None else [[fmt(v) for v in row] for row in reg.shape],
        "bound": fmt(reg.bound),
        "lower": [fmt(v) for v in lo],
        "upper": [fmt(v) for v in hi],
    }
    if d == 1 and args.method == "exact" and snap.full_rank:
        out["interval_radius"] = fmt(confidence_region_F(snap, mix, args.alpha).radius)
    with _output(args.out) as fh:
        json.dump(out, fh, indent=1)
        fh.write("\n")
    return EXIT_OK


def cmd_power(args) -> int:
    _require(args, "xi")
    try:
        if args.n is not None:
            xi_true = args.xi if args.xi_true is None else args.xi_true
            print(fmt(rejection_prob_at_n(args.n, xi_true, args.xi, args.alpha)))
        else:
            print(fixed_n_sample_size(args.xi, args.alpha, args.power))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return EXIT_OK


def _read_sample(path: str, y: str, pre: Optional[str]) -> np.ndarray:
    schema = Schema(y=y, x=(pre,) if pre else ())
    rows = [np.concatenate([[r.y], r.x]) for r in read_records(path, schema)]
    if not rows:
        raise InputError(f"sample {path} is empty")
    return np.array(rows)


def _simulation_setup(args):
    if args.dgp == "alternating":
        delta = 0.2 if args.delta is None else args.delta
        dgp = AlternatingDesign(args.beta, delta, args.sigma2)
        if args.phi is not None:
            mix = MixtureSpec.scalar(args.phi)
        else:
            xi = args.xi_mde if args.xi_mde is not None else dgp.xi
            mix = MixtureSpec.from_mde(xi)
        methods = args.methods or ["exact"]
        return dgp, mix, methods
    if args.dgp == "nonlinear":
        dgp = NonlinearModel(0.0 if args.delta is None else args.delta, args.rho)
    else:
        if not args.control:
            raise InputError("bootstrap needs --control")
        pre = args.sample_pre if args.use_pre else None
        ctl = _read_sample(args.control, args.sample_y, pre)
        trt = _read_sample(args.treatment_sample, args.sample_y, pre) if args.treatment_sample else None
        if args.mode == "ab" and trt is None:
            raise InputError("A/B mode needs --treatment-sample")
        dgp = BootstrapEmpirical(ctl, trt, args.rho, args.mode, args.use_pre)
    if args.phi is not None:
        mix = MixtureSpec.scalar(args.phi)
    else:
        lam = 1.0 if args.lam is None else args.lam
        mix = MixtureSpec.scaled_omega(lam, [[args.rho * (1 - args.rho)]])
    methods = args.methods or (["exact", "fixed"] if args.dgp == "nonlinear" else ["exact"])
    return dgp, mix, methods


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise InputError(f"--reps must be at least 1, got {args.reps}")
    if args.nmax < 1:
        raise InputError(f"--nmax must be at least 1, got {args.nmax}")
    if args.threads < 1:
        raise InputError("--threads must be at least 1")
    seed = _default_seed() if args.seed is None else args.seed
    try:
        dgp, mix, methods = _simulation_setup(args)
        for m in methods:
            if m not in METHODS:
                raise InputError(f"unknown method {m!r}; choose from {METHODS}")
        results = []
        for m in methods:
            samples = simulate_stopping_times(dgp, m, args.alpha, mix, args.nmax, args.reps, seed, args.threads)
            results.append((m, samples))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    tables = []
    for m, samples in results:
        st = stopping_time_stats(samples)
        label = samples[0].method
        print(f"method={label} dgp={dgp.name} seed={seed} reps={st['reps']} rejections={st['rejections']} "
              f"mean_tau={st['mean']:.2f} median_tau={st['median']:g}")
        tables.append((label, dgp.name, ecdf_summary(samples, n_max=args.nmax)))
    if args.out:
        with _output(args.out) as fh:
            write_summary_csv(fh, tables)
    if args.samples_out:
        with _output(args.samples_out) as fh:
            for i, (_, samples) in enumerate(results):
                write_samples_csv(fh, samples, dgp.name, header=(i == 0))
    return EXIT_OK


def cmd_checkpoint(args) -> int:
    ck = load_checkpoint(args.path)
    snap = snapshot(ck.stats)
    info = {
        "version": ck.version,
        "n": ck.stats.n,
        "p": ck.stats.p,
        "d": ck.stats.d,
        "kind": ck.config.get("kind", "monitor"),
        "full_rank": snap.full_rank,
        "delta_hat": [fmt(v) for v in snap.delta_hat],
        "s2": fmt(snap.s2),
        "p_running_min": fmt(ck.p_running_min),
        "tau": ck.tau,
    }
    json.dump(info, sys.stdout, indent=1)
    sys.stdout.write("\n")
    if args.resave:
        save_checkpoint(args.resave, ck)
    return EXIT_OK


COMMANDS = {
    "monitor": cmd_monitor,
    "ate": cmd_ate,
    "region": cmd_region,
    "power": cmd_power,
    "simulate": cmd_simulate,
    "checkpoint": cmd_checkpoint,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        # argparse usage errors exit with 2; --help/--version with 0
        return int(exc.code or 0)
    except (InputError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
