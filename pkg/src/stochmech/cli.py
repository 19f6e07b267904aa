"""Command-line harness: ``stochmech {theorem,dynamics,simulate,fokker,acceptance}``.

Options can also come from an INI file (``--config``), read from the
``[common]`` section and then the section named after the subcommand. Keys
are the long flag names with dashes or underscores. Flags on the command line
override the file.

Exit codes: 0 when every tolerance is met, 1 when a check fails, 2 for a
configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import re
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import acceptance
from .core import Grid, ModelParams, ParameterError, params_from_beta, params_from_nu, params_from_z
from .equivalence import residual_eq1, residual_eq2, second_order, split_identity_check
from .fokker_planck import (
    default_delta_width,
    equilibrium_check,
    ou_smoothed_moments,
    track_summary,
    transition_density,
)
from .kinematics import FieldHistory, check_dynamics, force_scale
from .montecarlo import (
    DEFAULT_SEED,
    StateDrift,
    bin_averages,
    derive_seed,
    empirical_density,
    estimate_backward_drift,
    estimate_forward_drift,
    gaussian_init,
    histogram_l1,
    simulate,
    variance_with_stderr,
    write_density_csv,
    write_drift_csv,
)
from .states import CATALOG_NAMES, GridCoverageError, WavePolar, catalog

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# option parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _grid_spec(text: str) -> tuple[int, float, float]:
    parts = str(text).split(",")
    if len(parts) != 3:
        raise ConfigError(f"--grid expects N,XMIN,XMAX, got {text!r}")
    try:
        n, lo, hi = int(parts[0]), float(parts[1]), float(parts[2])
    except ValueError as exc:
        raise ConfigError(f"bad --grid value {text!r}") from exc
    if n < 5 or not hi > lo:
        raise ConfigError("--grid needs N >= 5 and XMAX > XMIN")
    return n, lo, hi


@dataclass(frozen=True)
class Option:
    flag: str
    kind: type
    default: object
    help: str


COMMON = [
    Option("--seed", int, DEFAULT_SEED, "master seed for all random streams"),
    Option("--out", str, "out", "artifact directory"),
    Option("--grid", str, None, "grid as N,XMIN,XMAX (default: the state's recommended domain)"),
    Option("--quick", bool, False, "reduced sample sizes"),
]

SUBCOMMANDS: dict[str, tuple[str, list[Option]]] = {
    "theorem": (
        "residuals of the unscaled and z-scaled equations and their split identities",
        [
            Option("--state", str, "ho_ground", "catalog state"),
            Option("--z", str, "0.5,1,2,4", "comma-separated z values"),
            Option("--t", str, None, "comma-separated times (default: a state-specific set)"),
            Option("--perturb", float, 0.0, "add PERTURB * x^4 to the log-amplitude (a deliberate violation)"),
        ],
    ),
    "dynamics": (
        "the generalized dynamical law over a list of beta (or nu, or z) values",
        [
            Option("--state", str, "ho_ground", "catalog state"),
            Option("--beta", str, None, "comma-separated beta values (default -2,0,1,1.5)"),
            Option("--nu", str, None, "comma-separated diffusion constants"),
            Option("--z", str, None, "comma-separated z values"),
            Option("--t", str, None, "comma-separated times"),
        ],
    ),
    "simulate": (
        "Euler-Maruyama ensembles, histograms and drift estimates",
        [
            Option("--state", str, "ho_ground", "catalog state"),
            Option("--nu", str, "0.25,0.5,1,2", "comma-separated diffusion constants"),
            Option("--beta", str, None, "comma-separated beta values instead of --nu"),
            Option("--paths", int, 100_000, "number of paths"),
            Option("--dt", float, 1e-3, "time step"),
            Option("--T", float, 1.0, "final time"),
            Option("--bins", int, 60, "histogram bins over the grid"),
        ],
    ),
    "fokker": (
        "transition densities of a real stationary state from the forward equation",
        [
            Option("--state", str, "ho_ground", "catalog state (stationary and real)"),
            Option("--y", float, 1.0, "start point"),
            Option("--nu", str, "0.5,2", "comma-separated diffusion constants"),
            Option("--beta", str, None, "comma-separated beta values instead of --nu"),
            Option("--dt", float, 0.005, "time step"),
            Option("--T", float, None, "final time (default 10 relaxation times)"),
            Option("--eps", float, None, "width of the smoothed delta (default max(2h, 2% of domain))"),
            Option("--record-every", int, 10, "store every k-th step"),
        ],
    ),
    "acceptance": ("the full acceptance ladder with a pass/fail table", []),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochmech", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, options) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="INI file with [common] and per-command sections")
        for opt in COMMON + options:
            if opt.kind is bool:
                p.add_argument(opt.flag, action="store_const", const=True, default=None, help=opt.help)
            else:
                p.add_argument(opt.flag, type=opt.kind, default=None, help=opt.help)
    return parser


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _coerce(opt: Option, raw: str):
    if opt.kind is bool:
        text = raw.strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{opt.flag.lstrip('-')} must be a boolean, got {raw!r}")
    try:
        return opt.kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{opt.flag.lstrip('-')}: cannot parse {raw!r}") from exc


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and the command line (in increasing priority)."""
    options = COMMON + SUBCOMMANDS[args.command][1]
    known = {_dest(o.flag): o for o in options}
    values = {k: o.default for k, o in known.items()}
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise ConfigError(f"cannot read config file {args.config}")
        for section in ("common", args.command):
            if not cp.has_section(section):
                continue
            lowered = {k.lower(): k for k in known}  # configparser folds key case
            for key, raw in cp.items(section):
                k = lowered.get(key.replace("-", "_"))
                if k is None:
                    if section == "common":
                        continue  # common keys may target other subcommands
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[k] = _coerce(known[k], raw)
    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    return values


def _param_list(cfg: dict, default_beta: Sequence[float] | None = None) -> list[ModelParams]:
    given = [k for k in ("beta", "nu", "z") if cfg.get(k) is not None]
    if len(given) > 1:
        raise ConfigError(f"give exactly one of beta, nu, z (got {', '.join(given)})")
    if not given:
        if default_beta is None:
            raise ConfigError("one of beta, nu, z is required")
        given, cfg = ["beta"], {**cfg, "beta": ",".join(map(str, default_beta))}
    key = given[0]
    build = {"beta": params_from_beta, "nu": params_from_nu, "z": params_from_z}[key]
    out = []
    for v in _floats(cfg[key]):
        try:
            out.append(build(v))
        except ParameterError as exc:
            raise ConfigError(f"{key}={v}: {exc}") from exc
    if not out:
        raise ConfigError(f"empty {key} list")
    return out


def _entry(cfg: dict):
    name = cfg["state"]
    if name not in CATALOG_NAMES:
        raise ConfigError(f"unknown state {name!r}; choose from {', '.join(CATALOG_NAMES)}")
    return catalog(name)


def _times(cfg: dict, name: str) -> list[float]:
    if cfg.get("t") is not None:
        return _floats(cfg["t"])
    return list(acceptance.STATE_TIMES[name])


def _grid(cfg: dict, entry, t_max: float, n_default: int) -> Grid:
    if cfg.get("grid"):
        n, lo, hi = _grid_spec(cfg["grid"])
        return Grid(lo, hi, n)
    return entry.grid(n_default, t_max)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(fh, record: dict) -> None:
    line = json.dumps(record, allow_nan=False)
    fh.write(line + "\n")
    print(line)


def _fail(failures: list[str]) -> int:
    for f in failures:
        print(f"FAILED: {f}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# subcommands


def cmd_theorem(cfg: dict) -> int:
    e = _entry(cfg)
    params = _param_list({"z": cfg["z"]})
    times = _times(cfg, e.name)
    g = _grid(cfg, e, max(times), acceptance.COARSE_N)
    gf = g.refined()
    failures = []
    with open(_out_dir(cfg) / "theorem.jsonl", "w") as fh:
        for t in times:
            states = []
            for grid in (g, gf):
                s = e(grid, t)
                if cfg["perturb"]:
                    s = WavePolar(s.R + cfg["perturb"] * grid.x**4, s.S, s.time, s.R_t, s.S_t)
                states.append((s, e.V(grid)))
            (s_c, V_c), (s_f, V_f) = states
            r1 = [residual_eq1(s, V, e.hbar, e.mass, route="density") for s, V in states]
            ok1 = second_order(r1[0].max_abs_real, r1[1].max_abs_real) and second_order(r1[0].max_abs_imag, r1[1].max_abs_imag)
            _emit(fh, r1[1].record("residual_eq1", state=e.name, t=t, second_order=ok1))
            if not ok1:
                failures.append(f"residual_eq1 {e.name} t={t}: no second-order convergence")
            for p in params:
                split = split_identity_check(s_c, V_c, p)
                r2 = [residual_eq2(s, V, p, route="density") for s, V in states]
                ok2 = second_order(r2[0].max_abs_real, r2[1].max_abs_real) and second_order(r2[0].max_abs_imag, r2[1].max_abs_imag)
                _emit(fh, r2[1].record("residual_eq2", p, state=e.name, t=t, second_order=ok2))
                _emit(fh, {"check": "split_identity", "z": p.z, "beta": p.beta, "nu": p.nu, "state": e.name, "t": t,
                           "real_gap": split.real_gap, "imag_gap": split.imag_gap})
                if not ok2:
                    failures.append(f"residual_eq2 {e.name} t={t} z={p.z}: no second-order convergence")
                if not split.passed(1e-12):
                    failures.append(f"split_identity {e.name} t={t} z={p.z}")
    return _fail(failures)


def cmd_dynamics(cfg: dict) -> int:
    e = _entry(cfg)
    params = _param_list(cfg, default_beta=acceptance.BETA_LADDER)
    times = _times(cfg, e.name)
    g = _grid(cfg, e, max(times), acceptance.COARSE_N)
    V = e.V(g)
    bound = 5.0 * g.h**2 * force_scale(V)
    failures = []
    with open(_out_dir(cfg) / "dynamics.jsonl", "w") as fh:
        for t in times:
            history = FieldHistory.analytic(e(g, t))
            for p in params:
                rep = check_dynamics(history, p, V)
                passed = bool(rep.max_abs_real <= bound)
                _emit(fh, rep.record("check_dynamics", p, state=e.name, t=t, bound=bound, passed=passed))
                if not passed:
                    failures.append(f"check_dynamics {e.name} t={t} beta={p.beta}: {rep.max_abs_real:.3e} > {bound:.3e}")
    return _fail(failures)


def cmd_simulate(cfg: dict) -> int:
    e = _entry(cfg)
    if cfg.get("beta") is not None:
        params = _param_list({"beta": cfg["beta"]})
    else:
        params = _param_list({"nu": cfg["nu"]})
    n_paths = cfg["paths"] if not cfg["quick"] else min(cfg["paths"], acceptance.QUICK_PATHS)
    dt, T = cfg["dt"], cfg["T"]
    steps = int(round(T / dt))
    if steps < 3 or not math.isclose(steps * dt, T, rel_tol=1e-9):
        raise ConfigError("T must be a whole number (>= 3) of steps dt")
    g = _grid(cfg, e, T, 801)
    edges = np.linspace(g.x_min, g.x_max, cfg["bins"] + 1)
    target = e(g, T)
    ref = bin_averages(target.rho(), edges)
    _, target_var = target.moments()
    s0 = e(g, 0.0)
    mean0, var0 = s0.moments()
    bound = 0.02 * math.sqrt(acceptance.FULL_PATHS / n_paths)
    out = _out_dir(cfg)
    failures = []
    with open(out / "simulate.jsonl", "w") as fh:
        for i, p in enumerate(params):
            seed = derive_seed(cfg["seed"], i)
            ens = simulate(StateDrift(e, g, p), p, gaussian_init(mean0, math.sqrt(var0)), dt, steps, n_paths,
                           seed=seed, record=[0, steps - 2, steps - 1, steps])
            tag = f"{e.name}_nu{p.nu!r}"
            est = empirical_density(ens, steps, edges)
            write_density_csv(est, out / f"density_{tag}.csv")
            ens.write_summary_csv(out / f"summary_{tag}.csv")
            fwd = estimate_forward_drift(ens, steps - 1, edges)
            bwd = estimate_backward_drift(ens, steps - 1, edges)
            write_drift_csv(fwd, bwd, out / f"drift_{tag}.csv")
            var, se = variance_with_stderr(ens.at(steps))
            l1 = histogram_l1(est, ref)
            rec = {"check": "simulate", "state": e.name, "nu": p.nu, "z": p.z, "beta": p.beta, "seed": seed, "t": T,
                   "n_paths": n_paths, "var": var, "var_stderr": se, "var_target": target_var, "l1": l1, "l1_bound": bound}
            _emit(fh, rec)
            if l1 > bound:
                failures.append(f"histogram L1 {l1:.4f} > {bound:.4f} at nu={p.nu}")
            if abs(var - target_var) > 3 * se:
                failures.append(f"variance {var:.5f} vs {target_var:.5f} (> 3 SE) at nu={p.nu}")
    return _fail(failures)


def cmd_fokker(cfg: dict) -> int:
    e = _entry(cfg)
    if not e.stationary:
        raise ConfigError(f"{e.name} is not stationary; transition densities need a stationary real state")
    if cfg.get("beta") is not None:
        params = _param_list({"beta": cfg["beta"]})
    else:
        params = _param_list({"nu": cfg["nu"]})
    g = _grid(cfg, e, 0.0, 401)
    s = e(g)
    rho = s.rho()
    omega = e.params.get("omega")
    out = _out_dir(cfg)
    failures = []
    y = cfg["y"]
    with open(out / "fokker.jsonl", "w") as fh:
        for p in params:
            theta = p.z * omega
            T = cfg["T"] if cfg["T"] is not None else 10.0 / theta
            dt = cfg["dt"]
            if not math.isclose(round(T / dt) * dt, T, rel_tol=1e-9):
                T = round(T / dt) * dt
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                track = transition_density(s, p, y, dt, T, eps=cfg["eps"], record_every=cfg["record_every"])
            eps = cfg["eps"] if cfg["eps"] is not None else default_delta_width(g)
            track.write_csv(out / f"transition_{e.name}_nu{p.nu!r}.csv")
            l1 = equilibrium_check(track, rho)
            summary = track_summary(track, rho)
            # OU oracle comparison over the stored times
            worst_mean = worst_var = 0.0
            for t, m, v in zip(track.times, summary["mean"], summary["var"]):
                om, ov = ou_smoothed_moments(theta, 2.0 * p.nu, y, float(t), eps)
                worst_mean, worst_var = max(worst_mean, abs(m - om)), max(worst_var, abs(v - ov))
            summary.update(check="fokker", state=e.name, beta=p.beta, T=T, eps=eps, oracle_mean_err=worst_mean,
                           oracle_var_err=worst_var)
            _emit(fh, summary)
            if l1[-1] > 1e-3 and T >= 10.0 / theta * (1 - 1e-9):
                failures.append(f"L1(P_T, rho) = {l1[-1]:.3e} > 1e-3 at nu={p.nu}")
            if worst_mean > max(1e-3, 2 * eps**2) or worst_var > 1e-3:
                failures.append(f"oracle moments off by ({worst_mean:.2e}, {worst_var:.2e}) at nu={p.nu}")
    return _fail(failures)


def cmd_acceptance(cfg: dict) -> int:
    suite = acceptance.SuiteConfig(seed=cfg["seed"], quick=bool(cfg["quick"]), out=_out_dir(cfg))
    outcomes = acceptance.run_suite(suite)
    print(f"{sum(o.passed for o in outcomes)}/{len(outcomes)} criteria passed")
    return _fail([o.title for o in outcomes if not o.passed])


COMMANDS = {
    "theorem": cmd_theorem,
    "dynamics": cmd_dynamics,
    "simulate": cmd_simulate,
    "fokker": cmd_fokker,
    "acceptance": cmd_acceptance,
}


def _attach_negative_values(argv: Sequence[str]) -> list[str]:
    """Turn ``--beta -2,0,1`` into ``--beta=-2,0,1`` so argparse does not read the list as a flag."""
    out: list[str] = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and re.match(r"^-\.?\d", tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_attach_negative_values(argv))
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, GridCoverageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
