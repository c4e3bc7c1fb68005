"""Command-line front end.

Every command reads a model file (see :func:`chainkit.model.load_model`)
and writes CSV or JSON to ``--out`` (standard output by default). Exit
status is 0 on success, 2 on invalid input and 3 when a solver stopped
without meeting its tolerance or budget; partial results are still
written in that case.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

from .distribution import SparseDistribution, as_state
from .exit import Domain, exit_density_ct, exit_joint_dt, exit_marginals_minimal, load_domain
from .lyapunov import check_certificate, load_certificate
from .minimal import ConvergenceError
from .model import CONTINUOUS, DISCRETE, ChainModel, ModelError, load_model
from .simulate import HORIZON, sample_ensemble
from .stationary import ergodic_distributions
from .structure import Truncation, classify
from .transient import SolverBudgetError, fsp_adaptive, fsp_ct, fsp_dt, skeleton_matrix

log = logging.getLogger(__name__)

OK, INVALID, NOT_CONVERGED = 0, 2, 3
COMMANDS = ("simulate", "law", "exit", "stationary", "classify", "lyapunov", "skeleton")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    model: Path
    out: Optional[Path] = None
    seed: int = 0
    tol: Optional[float] = None
    series_tol: float = 1e-12
    max_states: int = 10_000
    trunc: Optional[str] = None
    trunc_file: Optional[Path] = None
    steps: Optional[int] = None
    time: Optional[float] = None
    domain_file: Optional[Path] = None
    bins: int = 100
    cert: Optional[Path] = None
    paths: int = 1
    max_jumps: int = 10**6
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.tol is not None and not self.tol > 0:
            raise UsageError("--tol must be positive")
        if not self.series_tol > 0:
            raise UsageError("--series-tol must be positive")


def fmt(x) -> str:
    """Shortest decimal string that round-trips the float exactly."""
    return repr(float(x))


def _state_cols(s) -> List[str]:
    return [str(c) for c in s]


def _parse_box(text: str) -> Truncation:
    """``lo:hi[,lo:hi...]`` per coordinate."""
    try:
        pairs = [part.split(":") for part in text.split(",")]
        lo = [int(a) for a, _ in pairs]
        hi = [int(b) for _, b in pairs]
    except ValueError:
        raise UsageError(f"--trunc expects lo:hi per coordinate, got {text!r}") from None
    if any(a > b for a, b in zip(lo, hi)):
        raise UsageError("--trunc bounds must satisfy lo <= hi")
    return Truncation.box(lo, hi)


def _load_trunc_file(path: Path) -> Truncation:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    states = data.get("states") if isinstance(data, dict) else data
    if not isinstance(states, list) or not states:
        raise ModelError(f"{path}: expected a nonempty list of states")
    try:
        return Truncation(as_state(s) for s in states)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{path}: {exc}") from None


def _truncation(cfg: RunConfig, required: bool = True) -> Optional[Truncation]:
    if cfg.trunc_file is not None:
        return _load_trunc_file(cfg.trunc_file)
    if cfg.trunc is not None:
        return _parse_box(cfg.trunc)
    if required:
        raise UsageError(f"{cfg.command} needs --trunc or --trunc-file")
    return None


def _horizon(cfg: RunConfig, model: ChainModel):
    if model.kind == DISCRETE:
        if cfg.steps is None:
            raise UsageError("discrete models need --steps")
        if cfg.steps < 0:
            raise UsageError("--steps must be nonnegative")
        return cfg.steps
    if cfg.time is None:
        raise UsageError("continuous models need --time")
    if cfg.time < 0:
        raise UsageError("--time must be nonnegative")
    return cfg.time


def _cmd_simulate(cfg: RunConfig, model: ChainModel, out: io.StringIO) -> int:
    if cfg.paths < 1:
        raise UsageError("--paths must be at least 1")
    if model.kind == DISCRETE:
        if cfg.steps is None:
            raise UsageError("discrete models need --steps")
        paths = sample_ensemble(model, cfg.paths, cfg.seed, n_steps=cfg.steps)
    else:
        t_max = cfg.extras.get("tmax") or cfg.time
        if t_max is None:
            raise UsageError("continuous models need --tmax (or --time)")
        paths = sample_ensemble(model, cfg.paths, cfg.seed, t_max=t_max, max_jumps=cfg.max_jumps)
    dim = model.dim
    ct = model.kind == CONTINUOUS
    out.write(",".join(["path", "index"] + (["time"] if ct else []) + [f"x{i}" for i in range(dim)]) + "\n")
    for k, p in enumerate(paths):
        for i, s in enumerate(p.states):
            lead = [str(k), str(i)] + ([fmt(p.times[i])] if ct else [])
            out.write(",".join(lead + _state_cols(s)) + "\n")
    status = OK
    if model.kind == CONTINUOUS:
        out.write("\npath,jumps,reason,diagnostic\n")
        for k, p in enumerate(paths):
            out.write(f"{k},{p.n_jumps},{p.reason},{fmt(p.diagnostic)}\n")
            if p.reason != HORIZON:
                status = NOT_CONVERGED
    return status


def _cmd_law(cfg: RunConfig, model: ChainModel, out: io.StringIO) -> int:
    horizon = _horizon(cfg, model)
    trunc = _truncation(cfg, required=cfg.tol is None)
    if cfg.tol is not None:
        res = fsp_adaptive(model, horizon, cfg.tol, trunc, max_states=cfg.max_states, series_tol=cfg.series_tol)
    else:
        try:
            if model.kind == DISCRETE:
                res = fsp_dt(model, horizon, trunc)
            else:
                res = fsp_ct(model, horizon, trunc, cfg.series_tol)
        except SolverBudgetError as exc:
            out.write("retained_mass,nan\nepsilon,1.0\n")
            out.write(f"truncation_size,{len(trunc)}\nconverged,false\nreason,solver-budget: {exc}\n")
            return NOT_CONVERGED
    dim = model.dim
    out.write(",".join([f"x{i}" for i in range(dim)] + ["mass"]) + "\n")
    for s in res.truncation:
        m = res.distribution.get(s, 0.0)
        if m > 0:
            out.write(",".join(_state_cols(s) + [fmt(m)]) + "\n")
    out.write(f"retained_mass,{fmt(res.retained_mass)}\n")
    out.write(f"epsilon,{fmt(res.epsilon)}\n")
    out.write(f"truncation_size,{len(res.truncation)}\n")
    out.write(f"converged,{'true' if res.converged else 'false'}\n")
    out.write(f"reason,{res.reason}\n")
    return OK if res.converged else NOT_CONVERGED


def _write_dist(out, title: str, dist: SparseDistribution, dim: int) -> None:
    out.write(f"# {title}\n")
    out.write(",".join([f"x{i}" for i in range(dim)] + ["value"]) + "\n")
    for s, v in sorted(dist.items()):
        out.write(",".join(_state_cols(s) + [fmt(v)]) + "\n")


def _write_joint(out, title: str, table, times, trunc: Truncation, label: str) -> None:
    out.write(f"# {title}\n")
    dim = len(trunc.states[0])
    out.write(",".join([label] + [f"x{i}" for i in range(dim)] + ["value"]) + "\n")
    for k in range(table.shape[0]):
        for j, s in enumerate(trunc):
            v = table[k, j]
            if v > 0:
                out.write(",".join([fmt(times[k]) if label == "bin_start" else str(int(times[k]))]
                                   + _state_cols(s) + [fmt(v)]) + "\n")


def _default_exit_trunc(model: ChainModel, domain: Domain) -> Truncation:
    if domain.states is None:
        raise UsageError("predicate domains need --trunc or --trunc-file")
    base = Truncation(sorted(set(domain.states) | set(model.gamma)))
    return base.expand(model)


def _cmd_exit(cfg: RunConfig, model: ChainModel, out: io.StringIO) -> int:
    if cfg.domain_file is None:
        raise UsageError("exit needs --domain-file")
    domain = load_domain(cfg.domain_file)
    trunc = _truncation(cfg, required=False) or _default_exit_trunc(model, domain)
    dim = model.dim
    if model.kind == DISCRETE and cfg.steps is not None:
        stats = exit_joint_dt(model, domain, cfg.steps, trunc)
        _write_joint(out, "mu", stats.mu, stats.times, trunc, "n")
        _write_joint(out, "nu", stats.nu, stats.times, trunc, "n")
    elif model.kind == CONTINUOUS and cfg.time is not None:
        stats = exit_density_ct(model, domain, cfg.time, trunc, cfg.series_tol, bins=cfg.bins)
        _write_dist(out, "mu_atom", SparseDistribution(
            ((s, float(v)) for s, v in zip(trunc, stats.mu_atom) if v > 0), check_mass=False), dim)
        _write_joint(out, "mu", stats.mu, stats.times, trunc, "bin_start")
        _write_joint(out, "nu", stats.nu, stats.times, trunc, "bin_start")
    else:
        stats = exit_marginals_minimal(model, domain, None, trunc, cfg.tol or 1e-12,
                                       assume_finite_exit=bool(cfg.extras.get("assume_finite_exit")))
    _write_dist(out, "mu_space", stats.mu_space, dim)
    _write_dist(out, "nu_space", stats.nu_space, dim)
    bound = "nan" if stats.error_bound is None else fmt(stats.error_bound)
    out.write("# summary\n")
    out.write(f"exit_probability,{fmt(stats.exit_probability)}\n")
    out.write(f"mean_exit_time,{fmt(stats.mean_exit_time)}\n")
    out.write(f"error_bound,{bound}\n")
    out.write(f"truncation_size,{len(trunc)}\n")
    out.write(f"converged,{'true' if stats.converged else 'false'}\n")
    out.write(f"reason,{stats.reason}\n")
    return OK if stats.converged else NOT_CONVERGED


def _cmd_stationary(cfg: RunConfig, model: ChainModel, out: io.StringIO) -> int:
    trunc = _truncation(cfg)
    report = ergodic_distributions(model, classify(model, trunc))
    dim = model.dim
    out.write(",".join(["class"] + [f"x{i}" for i in range(dim)] + ["probability"]) + "\n")
    for k, c in enumerate(report.classes):
        for s, v in sorted(c.distribution.items()):
            out.write(",".join([str(k)] + _state_cols(s) + [fmt(v)]) + "\n")
    summary = report.to_json()
    summary["requires_non_explosivity"] = False
    summary["note"] += "; every class is finite and closed, so the distributions are stationary"
    cfg.extras["json"] = summary
    return OK


def _cmd_classify(cfg: RunConfig, model: ChainModel, out: io.StringIO) -> int:
    trunc = _truncation(cfg)
    out.write(json.dumps(classify(model, trunc).to_json(), indent=2) + "\n")
    return OK


def _cmd_lyapunov(cfg: RunConfig, model: ChainModel, out: io.StringIO) -> int:
    if cfg.cert is None:
        raise UsageError("lyapunov needs --cert")
    cert = load_certificate(cfg.cert)
    trunc = _truncation(cfg)
    report = check_certificate(model, cert, trunc)
    out.write(json.dumps(report.to_json(), indent=2) + "\n")
    return OK


def _cmd_skeleton(cfg: RunConfig, model: ChainModel, out: io.StringIO) -> int:
    if model.kind != CONTINUOUS:
        raise UsageError("skeleton needs a continuous model")
    if cfg.time is None or not cfg.time > 0:
        raise UsageError("skeleton needs a positive --time (the sampling interval)")
    trunc = _truncation(cfg)
    try:
        E = skeleton_matrix(model, cfg.time, trunc, cfg.series_tol)
    except SolverBudgetError as exc:
        out.write(f"# solver-budget: {exc}\n")
        return NOT_CONVERGED
    dim = model.dim
    out.write(",".join([f"from{i}" for i in range(dim)] + [f"to{i}" for i in range(dim)] + ["probability"]) + "\n")
    for i, x in enumerate(trunc):
        for j, y in enumerate(trunc):
            if E[i, j] > 0:
                out.write(",".join(_state_cols(x) + _state_cols(y) + [fmt(E[i, j])]) + "\n")
    out.write("\n" + ",".join([f"from{i}" for i in range(dim)] + ["dead_mass"]) + "\n")
    for i, x in enumerate(trunc):
        out.write(",".join(_state_cols(x) + [fmt(max(0.0, 1.0 - E[i].sum()))]) + "\n")
    return OK


HANDLERS = {
    "simulate": _cmd_simulate,
    "law": _cmd_law,
    "exit": _cmd_exit,
    "stationary": _cmd_stationary,
    "classify": _cmd_classify,
    "lyapunov": _cmd_lyapunov,
    "skeleton": _cmd_skeleton,
}


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the process exit status."""
    try:
        model = load_model(cfg.model)
        buf = io.StringIO()
        status = HANDLERS[cfg.command](cfg, model, buf)
    except (UsageError, ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except (ConvergenceError, SolverBudgetError) as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return NOT_CONVERGED
    text = buf.getvalue()
    summary = cfg.extras.get("json")
    if cfg.out is None:
        sys.stdout.write(text)
        if summary is not None:
            sys.stdout.write("\n" + json.dumps(summary, indent=2) + "\n")
    else:
        Path(cfg.out).write_text(text)
        if summary is not None:
            Path(str(cfg.out) + ".json").write_text(json.dumps(summary, indent=2) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainkit", description="Analyse countable-state Markov chains.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model", type=Path, required=True, help="model JSON file")
        p.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=None, help="error tolerance")
        p.add_argument("--series-tol", type=float, default=1e-12, help="uniformization tail tolerance")
        p.add_argument("--max-states", type=int, default=10_000)
        p.add_argument("--trunc", default=None, help="truncation box lo:hi[,lo:hi...]")
        p.add_argument("--trunc-file", type=Path, default=None, help="JSON list of truncation states")

    def horizon(p: argparse.ArgumentParser) -> None:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--steps", type=int, default=None, help="number of steps (discrete models)")
        g.add_argument("--time", type=float, default=None, help="time horizon (continuous models)")

    p = sub.add_parser("simulate", help="sample trajectories")
    common(p)
    horizon(p)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--max-jumps", type=int, default=10**6)
    p.add_argument("--tmax", type=float, default=None, help="time horizon of continuous paths")

    p = sub.add_parser("law", help="time-varying law by finite state projection")
    common(p)
    horizon(p)

    p = sub.add_parser("exit", help="exit distribution and occupation measure of a domain")
    common(p)
    horizon(p)
    p.add_argument("--domain-file", type=Path, required=True)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--assume-finite-exit", action="store_true")

    p = sub.add_parser("stationary", help="ergodic distributions of closed classes")
    common(p)

    p = sub.add_parser("classify", help="communicating classes, closedness and periods")
    common(p)

    p = sub.add_parser("lyapunov", help="check a drift certificate on a truncation")
    common(p)
    p.add_argument("--cert", type=Path, required=True)

    p = sub.add_parser("skeleton", help="sampled-chain one-step matrix")
    common(p)
    p.add_argument("--time", type=float, required=True, help="sampling interval")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    extras = {}
    if getattr(args, "tmax", None) is not None:
        extras["tmax"] = args.tmax
    if getattr(args, "assume_finite_exit", False):
        extras["assume_finite_exit"] = True
    return RunConfig(
        command=args.command,
        model=args.model,
        out=args.out,
        seed=args.seed,
        tol=args.tol,
        series_tol=args.series_tol,
        max_states=args.max_states,
        trunc=args.trunc,
        trunc_file=args.trunc_file,
        steps=getattr(args, "steps", None),
        time=getattr(args, "time", None),
        domain_file=getattr(args, "domain_file", None),
        bins=getattr(args, "bins", 100),
        cert=getattr(args, "cert", None),
        paths=getattr(args, "paths", 1),
        max_jumps=getattr(args, "max_jumps", 10**6),
        extras=extras,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
