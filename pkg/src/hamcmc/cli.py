"""Command-line entry point: ``hamcmc {sample,figure,scaling,selftest}``.

Exit codes: 0 on success, 1 for configuration errors, 2 for I/O errors and
3 when ``selftest`` finds a failing check.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import acceptance
from .analysis import integrated_autocorrelation, optimal_acceptance, summarize, tune_scale
from .integrators import euler_step, leapfrog_step, leapfrog_trajectory, modified_euler_step, tempered_trajectory
from .model import CanonicalDensity, KineticSpec, PhaseState, TargetDensity
from .samplers import KERNELS, Shortcut, TrajectoryPlan, run_chain
from .targets import FIGURE_TARGETS, ReplicatedTarget, make_figure_targets

FIGURES = ("fig1", "fig3", "fig4", "fig5", "fig6", "fig7", "fig9")
SCALING_METHODS = ("hmc", "rwm", "lmc")


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


@dataclass
class ExperimentConfig:
    """Settings for ``hamcmc sample``."""

    target: str = "gauss1d"
    kernel: str = "hmc"
    iters: int = 1000
    burn_in: Optional[int] = None
    seed: Optional[int] = None
    out: str = "."
    monitor: Optional[list[int]] = None
    epsilon_lo: float = 0.1
    epsilon_hi: Optional[float] = None
    steps_lo: int = 20
    steps_hi: Optional[int] = None
    window: int = 1
    alpha_temp: float = 1.0
    alpha_ref: float = 0.0
    window_weights: Optional[list[float]] = None
    shortcut_mode: Optional[str] = None
    shortcut_threshold: Optional[float] = None
    shortcut_group: int = 1
    shortcut_lower: Optional[float] = None
    shortcut_upper: Optional[float] = None
    init: str = "draw"
    extra: dict = field(default_factory=dict)

    def plan(self) -> TrajectoryPlan:
        shortcut = None
        if self.shortcut_mode:
            shortcut = Shortcut(
                self.shortcut_mode,
                threshold=self.shortcut_threshold,
                group_size=self.shortcut_group,
                lower=self.shortcut_lower,
                upper=self.shortcut_upper,
            )
        return TrajectoryPlan(
            (self.epsilon_lo, self.epsilon_hi if self.epsilon_hi is not None else self.epsilon_lo),
            (self.steps_lo, self.steps_hi if self.steps_hi is not None else self.steps_lo),
            window=self.window,
            alpha_temp=self.alpha_temp,
            alpha_ref=self.alpha_ref,
            shortcut=shortcut,
            window_weights=None if self.window_weights is None else np.array(self.window_weights),
        )


_INT_KEYS = {"iters", "burn_in", "seed", "steps_lo", "steps_hi", "window", "shortcut_group"}
_FLOAT_KEYS = {
    "epsilon_lo", "epsilon_hi", "alpha_temp", "alpha_ref",
    "shortcut_threshold", "shortcut_lower", "shortcut_upper",
}
_STR_KEYS = {"target", "kernel", "out", "shortcut_mode", "init"}


def _convert(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "monitor":
            return [int(v) for v in raw.split(",") if v.strip()]
        if key == "window_weights":
            return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    if key in _STR_KEYS:
        return raw
    raise ConfigError(f"unknown configuration key {key!r}")


def read_config(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    return {key.replace("-", "_"): _convert(key.replace("-", "_"), value)
            for key, value in parser["experiment"].items()}


def resolve_target(name: str) -> TargetDensity:
    """Named figure target, or ``replicated:D`` for ``D`` iid standard normals."""
    if name.startswith("replicated:"):
        try:
            dim = int(name.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad replicated target {name!r}") from exc
        if dim < 1:
            raise ConfigError("replicated target needs a positive dimension")
        return ReplicatedTarget.gaussian(dim)
    try:
        return make_figure_targets(name)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_seed(seed) -> int:
    if seed is None:
        raise ConfigError("a seed is required (--seed or 'seed' in the config file)")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return int(seed)


def _build_config(args) -> ExperimentConfig:
    values = read_config(args.config) if args.config else {}
    overrides = {
        "seed": args.seed, "out": args.out, "kernel": args.kernel, "target": args.target,
        "iters": args.iters, "burn_in": args.burn_in,
        "epsilon_lo": args.epsilon_lo, "epsilon_hi": args.epsilon_hi,
        "steps_lo": args.steps_lo, "steps_hi": args.steps_hi, "window": args.window,
        "alpha_temp": args.alpha_temp, "alpha_ref": args.alpha_ref,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def cmd_sample(cfg: ExperimentConfig) -> Path:
    seed = _require_seed(cfg.seed)
    if cfg.kernel not in KERNELS:
        raise ConfigError(f"unknown kernel {cfg.kernel!r}; choose from {', '.join(KERNELS)}")
    if cfg.iters < 1:
        raise ConfigError("iters must be at least 1")
    target = resolve_target(cfg.target)
    try:
        plan = cfg.plan()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    monitor = cfg.monitor or list(range(1, target.dim + 1))
    if any(not 1 <= i <= target.dim for i in monitor):
        raise ConfigError(f"monitored coordinates must lie in 1..{target.dim}")
    burn_in = cfg.burn_in if cfg.burn_in is not None else cfg.iters // 10
    if not 0 <= burn_in < cfg.iters:
        raise ConfigError("burn_in must be smaller than iters")

    init_seed, chain_seed = np.random.SeedSequence(seed).spawn(2)
    if cfg.init == "draw" and hasattr(target, "draw"):
        q0 = target.draw(np.random.default_rng(init_seed))
    elif cfg.init in ("draw", "zero"):
        q0 = np.zeros(target.dim)
    else:
        try:
            q0 = np.array([float(v) for v in cfg.init.split(",")])
        except ValueError as exc:
            raise ConfigError(f"bad init {cfg.init!r}") from exc
        if q0.size != target.dim:
            raise ConfigError(f"init needs {target.dim} values")

    canonical = CanonicalDensity(target, KineticSpec.unit(target.dim))
    try:
        chain = run_chain(q0, canonical, plan, cfg.kernel, cfg.iters, chain_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = summarize(chain, burn_in)

    out = _out_dir(cfg.out)
    cols = [i - 1 for i in monitor]
    header = ["iteration", *[f"q{i}" for i in monitor], "delta_h", "accepted", "divergent", "gradient_evals"]
    rows = (
        [i, *chain.positions[i, cols], chain.delta_h[i], chain.accepted[i], chain.divergent[i],
         chain.gradient_evals[i]]
        for i in range(len(chain))
    )
    _write_csv(out / "chain.csv", header, rows)

    summary = [
        ("n_samples", "all", report.n_samples),
        ("burn_in", "all", burn_in),
        ("rejection_rate", "all", report.rejection_rate),
        ("gradient_evals", "all", report.gradient_evals),
        ("divergences", "all", report.divergences),
        ("delta_h_mean", "all", report.delta_h_mean),
        ("delta_h_var", "all", report.delta_h_var),
    ]
    for i in monitor:
        for name, values in (("mean", report.means), ("sd", report.sds),
                             ("tau", report.tau), ("ess", report.ess)):
            summary.append((name, f"q{i}", values[i - 1]))
    summary = [row for row in summary if np.isfinite(row[2])]
    _write_csv(out / "summary.csv", ["statistic", "coordinate", "value"], summary)
    return out


def _fig1_rows():
    target, kinetic = make_figure_targets("gauss1d"), KineticSpec.unit(1)
    series = {
        "euler": (euler_step, 0.3),
        "modified_euler": (modified_euler_step, 0.3),
        "leapfrog_eps0.3": (leapfrog_step, 0.3),
        "leapfrog_eps1.2": (leapfrog_step, 1.2),
    }
    states = {name: PhaseState([0.0], [1.0]) for name in series}
    rows = []
    for step in range(21):
        row = [step]
        for name, (stepper, eps) in series.items():
            if step > 0:
                states[name] = stepper(states[name], target, kinetic, eps).state
            row += [states[name].q[0], states[name].p[0]]
        row += [math.sin(0.3 * step), math.cos(0.3 * step)]
        rows.append(row)
    header = ["step"]
    for name in (*series, "exact_eps0.3"):
        header += [f"{name}_q", f"{name}_p"]
    return header, rows


def _fig3_rows():
    target = make_figure_targets("gauss2d_95")
    traj = leapfrog_trajectory(
        PhaseState([-1.50, -1.55], [-1.0, 1.0]), target, KineticSpec.unit(2), 0.25, 25, record=True
    )
    rows = [[i, *traj.path_q[i], *traj.path_p[i], traj.energies[i]] for i in range(traj.energies.size)]
    return ["step", "q1", "q2", "p1", "p2", "H"], rows


def _two_d_chains(seed: int, n: int):
    canonical = CanonicalDensity(make_figure_targets("gauss2d_98"), KineticSpec.unit(2))
    start = np.array([-1.50, -1.55])
    seeds = np.random.SeedSequence(seed).spawn(2)
    rwm = run_chain(start, canonical, TrajectoryPlan.fixed(0.18, 20), "rwm", n, seeds[0])
    hmc = run_chain(start, canonical, TrajectoryPlan.fixed(0.18, 20), "hmc", n, seeds[1])
    return start, rwm, hmc


def _fig4_rows(seed: int):
    start, rwm, hmc = _two_d_chains(seed, 20)
    rows = [[0, *start, *start]]
    rows += [[i + 1, *rwm.positions[i], *hmc.positions[i]] for i in range(20)]
    return ["iteration", "rwm_q1", "rwm_q2", "hmc_q1", "hmc_q2"], rows


def _fig5_rows(seed: int):
    start, rwm, hmc = _two_d_chains(seed, 200)
    rows = [[0, start[0], start[0]]]
    rows += [[i + 1, rwm.positions[i, 0], hmc.positions[i, 0]] for i in range(200)]
    return ["iteration", "rwm_q1", "hmc_q1"], rows


def _hundred_d_chains(seed: int):
    target = make_figure_targets("gauss100d")
    canonical = CanonicalDensity(target, KineticSpec.unit(100))
    init, s_rwm, s_hmc = np.random.SeedSequence(seed).spawn(3)
    start = target.draw(np.random.default_rng(init))
    rwm = run_chain(start, canonical, TrajectoryPlan((0.0176, 0.0264), (150, 150)), "rwm", 1000, s_rwm)
    hmc = run_chain(start, canonical, TrajectoryPlan((0.0104, 0.0156), (150, 150)), "hmc", 1000, s_hmc)
    return target, rwm, hmc


def _fig6_rows(seed: int):
    _, rwm, hmc = _hundred_d_chains(seed)
    rows = [[i + 1, rwm.positions[i, -1], hmc.positions[i, -1]] for i in range(len(rwm))]
    return ["iteration", "rwm_q100", "hmc_q100"], rows


def _fig7_rows(seed: int):
    target, rwm, hmc = _hundred_d_chains(seed)
    r_mean, h_mean = rwm.positions.mean(axis=0), hmc.positions.mean(axis=0)
    r_sd, h_sd = rwm.positions.std(axis=0, ddof=1), hmc.positions.std(axis=0, ddof=1)
    rows = [[i + 1, target.sds[i], r_mean[i], h_mean[i], r_sd[i], h_sd[i]] for i in range(100)]
    return ["coordinate", "true_sd", "rwm_mean", "hmc_mean", "rwm_sd", "hmc_sd"], rows


def _fig9_rows():
    target = make_figure_targets("mixture_fig9")
    rows = []
    starts = {"top": ([-0.4, -0.9], [0.7, -0.9]), "bottom": ([0.1, 1.0], [0.5, 0.8])}
    for label, (q, p) in starts.items():
        traj = tempered_trajectory(PhaseState(q, p), target, KineticSpec.unit(2), 0.3, 200, 1.04, record=True)
        rows += [[label, i, traj.energies[i], *traj.path_q[i]] for i in range(traj.energies.size)]
    return ["trajectory", "step", "H", "q1", "q2"], rows


def cmd_figure(figure_id: str, seed: int, out_dir: str) -> Path:
    seed = _require_seed(seed)
    builders = {
        "fig1": _fig1_rows,
        "fig3": _fig3_rows,
        "fig4": lambda: _fig4_rows(seed),
        "fig5": lambda: _fig5_rows(seed),
        "fig6": lambda: _fig6_rows(seed),
        "fig7": lambda: _fig7_rows(seed),
        "fig9": _fig9_rows,
    }
    if figure_id not in builders:
        raise ConfigError(f"unknown figure {figure_id!r}; choose from {', '.join(FIGURES)}")
    header, rows = builders[figure_id]()
    out = _out_dir(out_dir)
    path = out / f"{figure_id}.csv"
    _write_csv(path, header, rows)
    return path


def scaling_rows(method: str, dims: Sequence[int], seed: int, iters: int, trajectory_time: float = 1.5):
    """Tune each dimension to the method's optimal acceptance and measure cost."""
    if method not in SCALING_METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(SCALING_METHODS)}")
    if not dims or any(d < 1 for d in dims) or list(dims) != sorted(dims):
        raise ConfigError("dims must be positive and in ascending order")
    a_star = optimal_acceptance(method)[1]
    rows = []
    for d, child in zip(dims, np.random.SeedSequence(seed).spawn(len(dims))):
        tune_seed, chain_seed = child.spawn(2)
        target = ReplicatedTarget.gaussian(d)
        scale, acc = tune_scale(target, method, a_star, np.random.default_rng(tune_seed),
                                trajectory_time=trajectory_time)
        canonical = CanonicalDensity(target, KineticSpec.unit(d))
        if method == "rwm":
            plan, kernel, evals = TrajectoryPlan.fixed(scale, 1), "rwm", 1
        elif method == "lmc":
            plan, kernel, evals = TrajectoryPlan.fixed(scale, 1), "lmc", 2
        else:
            steps = max(1, int(round(trajectory_time / scale)))
            plan, kernel, evals = TrajectoryPlan.fixed(scale, steps), "hmc", steps + 1
        start = target.draw(np.random.default_rng(tune_seed))
        chain = run_chain(start, canonical, plan, kernel, iters, chain_seed)
        taus = [integrated_autocorrelation(chain.positions[:, j])
                for j in range(d) if np.ptp(chain.positions[:, j]) > 0]
        tau = float(np.mean(taus)) if taus else float("nan")
        rows.append([d, scale, acc, a_star, 1.0 - chain.rejection_rate, evals, tau, evals * tau])
    header = ["d", "scale", "tuned_acceptance", "target_acceptance", "chain_acceptance",
              "gradient_evals_per_iteration", "tau", "cost"]
    return header, rows


def cmd_scaling(method: str, dims: Sequence[int], seed: int, out_dir: str, iters: int) -> Path:
    seed = _require_seed(seed)
    if iters < 100:
        raise ConfigError("scaling needs at least 100 iterations per dimension")
    header, rows = scaling_rows(method, dims, seed, iters)
    out = _out_dir(out_dir)
    path = out / f"scaling_{method}.csv"
    _write_csv(path, header, rows)
    return path


def cmd_selftest(criteria: Sequence[int]) -> bool:
    ok = True
    for number in criteria:
        if number not in acceptance.CHECKS:
            raise ConfigError(f"unknown criterion {number}")
        result = acceptance.CHECKS[number]()
        print(result.line(), flush=True)
        ok &= result.passed
    return ok


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hamcmc", description="Hamiltonian Monte Carlo experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sample = sub.add_parser("sample", help="run a chain and write chain.csv and summary.csv")
    sample.add_argument("--config", help="flat key = value configuration file")
    sample.add_argument("--seed", type=int)
    sample.add_argument("--out", help="output directory")
    sample.add_argument("--kernel", help=f"one of {', '.join(KERNELS)}")
    sample.add_argument("--target", help=f"one of {', '.join(FIGURE_TARGETS)} or replicated:D")
    sample.add_argument("--iters", type=int)
    sample.add_argument("--burn-in", type=int, dest="burn_in")
    sample.add_argument("--epsilon-lo", type=float, dest="epsilon_lo")
    sample.add_argument("--epsilon-hi", type=float, dest="epsilon_hi")
    sample.add_argument("--steps-lo", type=int, dest="steps_lo")
    sample.add_argument("--steps-hi", type=int, dest="steps_hi")
    sample.add_argument("--window", type=int)
    sample.add_argument("--alpha-temp", type=float, dest="alpha_temp")
    sample.add_argument("--alpha-ref", type=float, dest="alpha_ref")

    figure = sub.add_parser("figure", help="write the series behind one figure")
    figure.add_argument("figure_id", help=f"one of {', '.join(FIGURES)}")
    figure.add_argument("--seed", type=int)
    figure.add_argument("--out", default=".")

    scaling = sub.add_parser("scaling", help="tune and cost a method across dimensions")
    scaling.add_argument("method", help=f"one of {', '.join(SCALING_METHODS)}")
    scaling.add_argument("--dims", type=_int_list, default=[16, 64, 256])
    scaling.add_argument("--seed", type=int)
    scaling.add_argument("--iters", type=int, default=2000)
    scaling.add_argument("--out", default=".")

    selftest = sub.add_parser("selftest", help="run the acceptance checks")
    selftest.add_argument("--only", type=_int_list, help="comma-separated criterion numbers")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "sample":
            path = cmd_sample(_build_config(args))
            print(f"wrote {path / 'chain.csv'} and {path / 'summary.csv'}")
        elif args.command == "figure":
            print(f"wrote {cmd_figure(args.figure_id, args.seed, args.out)}")
        elif args.command == "scaling":
            print(f"wrote {cmd_scaling(args.method, args.dims, args.seed, args.out, args.iters)}")
        else:
            if not cmd_selftest(args.only or sorted(acceptance.CHECKS)):
                return 3
        return 0
    except ConfigError as exc:
        print(f"hamcmc: configuration error: {exc}", file=sys.stderr)
        return 1
    except TypeError as exc:
        # unexpected keys reaching ExperimentConfig
        print(f"hamcmc: configuration error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hamcmc: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
