"""``winding``: kernel tables, variance curves, Monte Carlo runs, verification.

Exit codes: 0 ok, 1 usage, 2 degenerate measure, 3 variance cross-check
failed, 4 simulation failures, 5 verification failed, 6 classification fit
unreliable.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import stats, theory
from .spectral import BUILTIN_NAMES, DegenerateMeasureError, builtin, measure_from_json

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE, EXIT_CROSSCHECK = 0, 1, 2, 3
EXIT_SIMULATION, EXIT_VERIFY, EXIT_CLASSIFY = 4, 5, 6
DEFAULT_SEED = 20240917
CROSSCHECK_TOL = 1e-6


@dataclass
class RunConfig:
    builtin: str = "gaussian"
    params: str = ""
    measure: str | None = None
    T: float = 50.0
    T_min: float = 1.0
    T_max: float = 200.0
    T_count: int = 16
    T_spacing: str = "log"
    xmax: float = 10.0
    n: int = 2001
    n_paths: int = 2000
    seed: int = DEFAULT_SEED
    dt0: float | None = None
    n_freq: int | None = None
    threads: int = 1
    out: str = "."
    theory: bool = False
    per_path_csv: bool = False
    profile: str = "auto"
    source: str = "theory"

    def T_grid(self) -> np.ndarray:
        if not 0 < self.T_min < self.T_max or self.T_count < 2:
            raise ValueError("T grid needs 0 < T_min < T_max and T_count >= 2")
        if self.T_spacing == "log":
            return np.geomspace(self.T_min, self.T_max, self.T_count)
        if self.T_spacing == "linear":
            return np.linspace(self.T_min, self.T_max, self.T_count)
        raise ValueError("T_spacing must be 'log' or 'linear'")


# classify works on a later window than the variance curve: small-T transients bias fits
CLASSIFY_DEFAULTS = {"T_min": 100.0, "T_max": 400.0, "T_count": 9}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_params(text: str, name: str):
    if not text:
        return ()
    if name == "atomic":
        pairs = []
        for item in text.split(","):
            f, m = item.split(":")
            pairs.append((float(f), float(m)))
        return tuple(pairs)
    return tuple(float(v) for v in text.split(","))


def load_measure(cfg: RunConfig):
    """``(label, measure, covariance evaluator)`` from the configuration."""
    if cfg.measure:
        with open(cfg.measure, encoding="utf-8") as fh:
            doc = json.load(fh)
        m, ev = measure_from_json(doc)
        return os.path.basename(cfg.measure), m, ev
    m, ev = builtin(cfg.builtin, _parse_params(cfg.params, cfg.builtin))
    label = cfg.builtin + (f"({cfg.params})" if cfg.params else "")
    return label, m, ev


def _num(v):
    """JSON-safe float: non-finite values become null."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _write_json(path, doc):
    text = json.dumps(doc, indent=2, sort_keys=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    print(text)


def _out(cfg, name):
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def cmd_kernel(cfg: RunConfig) -> int:
    label, m, ev = load_measure(cfg)
    x = np.linspace(0.0, cfg.xmax, cfg.n)
    prof = theory.kernel_profile(ev, x)
    prof.to_csv(_out(cfg, "kernel.csv"))
    _write_json(_out(cfg, "kernel_singular.json"), {
        "kernel": label, "seed": cfg.seed, "xmax": cfg.xmax, "n": cfg.n,
        "singular_points": [float(s) for s in prof.singular_points],
        "min_K": float(np.min(prof.K_values)), "min_Ktilde": float(np.min(prof.Ktilde_values)),
    })
    return EXIT_OK


def cmd_variance(cfg: RunConfig) -> int:
    label, m, ev = load_measure(cfg)
    curve = theory.variance_curve(ev, cfg.T_grid())
    curve.to_csv(_out(cfg, "variance.csv"))
    gap = float(np.max(curve.rel_gap))
    slope = theory.asymptotic_slope(ev)
    _write_json(_out(cfg, "variance.json"), {
        "kernel": label, "seed": cfg.seed, "max_rel_gap": gap, "tolerance": CROSSCHECK_TOL,
        "asymptotic_slope": _num(slope), "slope_diverges": not math.isfinite(slope),
        "min_V_over_T": stats.linear_lower_bound_check(curve),
    })
    return EXIT_OK if gap < CROSSCHECK_TOL else EXIT_CROSSCHECK


def _report_doc(label, rep: stats.MCReport, theory_V=None):
    doc = {"kernel": label, "T": rep.T, "n_paths": rep.n_paths, "seed": rep.seed,
           "mean": rep.mean, "var": rep.variance, "se_mean": rep.se_mean,
           "se_var": rep.se_variance, "theory_V": _num(theory_V), "z": None,
           "ks": None, "p": None, "n_failures": rep.n_failures}
    if theory_V is not None and rep.se_variance > 0:
        doc["z"] = stats.compare(theory_V, rep)
    if rep.n_paths >= 100 and rep.variance > 0:
        clt = stats.clt_test(rep.deltas)
        doc["ks"], doc["p"] = clt.statistic, clt.p_value
    return doc


def cmd_simulate(cfg: RunConfig) -> int:
    label, m, ev = load_measure(cfg)
    rep = stats.mc_winding(m, cfg.T, cfg.n_paths, cfg.seed, n_freq=cfg.n_freq, dt0=cfg.dt0,
                           threads=cfg.threads, allow_degenerate=True)
    theory_V = None
    if cfg.theory:
        theory_V = 0.0 if m.degenerate else theory.variance_via_K(ev, cfg.T)
    _write_json(_out(cfg, "simulate.json"), _report_doc(label, rep, theory_V))
    if cfg.per_path_csv:
        with open(_out(cfg, "paths.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_index", "T", "delta", "n_segments", "refinements"])
            for s in rep.samples:
                w.writerow([s.path_index, repr(s.T), repr(s.delta), s.n_segments, s.refinements])
    return EXIT_OK


def _check(name, passed, **numbers):
    return {"criterion": name, "pass": bool(passed), **{k: _num(v) if isinstance(v, float) else v
                                                        for k, v in numbers.items()}}


def cmd_verify(cfg: RunConfig) -> int:
    label, m, ev = load_measure(cfg)
    theory.require_nondegenerate(ev)
    profile = cfg.profile
    if profile == "auto":
        profile = "linear" if m.has_density else "quadratic"
    T = cfg.T
    checks = []
    rep = stats.mc_winding(m, T, cfg.n_paths, cfg.seed, n_freq=cfg.n_freq, dt0=cfg.dt0,
                           threads=cfg.threads)
    mu = theory.mean_winding(ev, T)
    checks.append(_check("mean", abs(rep.mean - mu) <= 3 * rep.se_mean,
                         theory=mu, empirical=rep.mean, se=rep.se_mean))
    if profile == "linear":
        V = theory.variance_via_K(ev, T)
        z = stats.compare(V, rep)
        checks.append(_check("variance", abs(z) < 3, theory=V, empirical=rep.variance, z=z))
        clt = stats.clt_test(rep.deltas)
        checks.append(_check("clt", clt.p_value > 0.01, ks=clt.statistic, p=clt.p_value))
        curve = theory.variance_curve(ev, np.geomspace(1.0, T, 16))
        lb = stats.linear_lower_bound_check(curve)
        checks.append(_check("lower_bound", lb > 0, min_V_over_T=lb))
    else:
        # CLT does not hold with atoms; check quadratic growth on MC instead
        Ts = T / np.array([8.0, 4.0, 2.0, 1.0])
        reps = [stats.mc_winding(m, t, cfg.n_paths, cfg.seed, dt0=cfg.dt0, threads=cfg.threads)
                for t in Ts]
        fit = stats.growth_exponent(reps, min_points=4)
        ratio = stats.subquadratic_check(reps)
        checks.append(_check("quadratic_growth", 1.8 <= fit.exponent <= 2.05,
                             exponent=fit.exponent, residual=fit.residual))
        checks.append(_check("no_decay", min(ratio) >= 0.5 * max(ratio), V_over_T2=ratio))
    ok = all(c["pass"] for c in checks)
    _write_json(_out(cfg, "verify.json"), {"kernel": label, "seed": cfg.seed, "T": T,
                                          "n_paths": cfg.n_paths, "profile": profile,
                                          "checks": checks, "pass": ok})
    return EXIT_OK if ok else EXIT_VERIFY


def classify_regime(T, V, exponent: float) -> str:
    """Label a growth curve by its fitted exponent and log-correction test."""
    T = np.asarray(T, dtype=float)
    V = np.asarray(V, dtype=float)
    if exponent > 1.9:
        return "quadratic"
    flat = V / T
    if np.max(flat) / np.min(flat) - 1 < 0.05:
        return "linear"
    tlog = V / (T * np.log(T))
    if np.all(T > 1) and np.max(tlog) / np.min(tlog) - 1 < 0.10:
        return "T log T"
    return f"power {exponent:.1f}"


def cmd_classify(cfg: RunConfig) -> int:
    label, m, ev = load_measure(cfg)
    theory.require_nondegenerate(ev)
    Ts = cfg.T_grid()
    if cfg.source == "mc":
        reps = [stats.mc_winding(m, t, cfg.n_paths, cfg.seed, n_freq=cfg.n_freq, dt0=cfg.dt0,
                                 threads=cfg.threads, T_max=float(Ts[-1])) for t in Ts]
        V = np.array([r.variance for r in reps])
    else:
        V = theory.variance_curve(ev, Ts).V_via_K
    fit = stats.growth_exponent((Ts, V), min_points=min(6, Ts.size))
    regime = classify_regime(Ts, V, fit.exponent)
    _write_json(_out(cfg, "classify.json"), {
        "kernel": label, "seed": cfg.seed, "source": cfg.source, "exponent": fit.exponent,
        "intercept": fit.intercept, "residual": fit.residual, "T_range": list(fit.T_range),
        "regime": regime})
    return EXIT_OK if fit.residual <= 0.1 else EXIT_CLASSIFY


COMMANDS = {"kernel": cmd_kernel, "variance": cmd_variance, "simulate": cmd_simulate,
            "verify": cmd_verify, "classify": cmd_classify}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="winding", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        S = argparse.SUPPRESS
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--builtin", choices=BUILTIN_NAMES, default=S)
        g.add_argument("--measure", default=S, help="measure JSON file")
        sp.add_argument("--params", default=S,
                        help="comma list; atomic takes freq:mass pairs, e.g. 1:0.5,3:0.5")
        sp.add_argument("--config", default=None, help="JSON file of defaults")
        sp.add_argument("--print-config", action="store_true")
        sp.add_argument("--seed", type=int, default=S)
        sp.add_argument("--threads", type=int, default=S)
        sp.add_argument("--out", default=S)
        sp.add_argument("--T", type=float, default=S)
        sp.add_argument("--T-min", dest="T_min", type=float, default=S)
        sp.add_argument("--T-max", dest="T_max", type=float, default=S)
        sp.add_argument("--T-count", dest="T_count", type=int, default=S)
        sp.add_argument("--T-spacing", dest="T_spacing", choices=["log", "linear"], default=S)
        sp.add_argument("--xmax", type=float, default=S)
        sp.add_argument("--n", type=int, default=S, help="kernel grid size")
        sp.add_argument("--n-paths", dest="n_paths", type=int, default=S)
        sp.add_argument("--dt0", type=float, default=S)
        sp.add_argument("--n-freq", dest="n_freq", type=int, default=S)
        sp.add_argument("--theory", action="store_true", default=S)
        sp.add_argument("--per-path-csv", dest="per_path_csv", action="store_true", default=S)
        sp.add_argument("--profile", choices=["auto", "linear", "quadratic"], default=S)
        sp.add_argument("--source", choices=["theory", "mc"], default=S)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    values = asdict(RunConfig())
    if args.command == "classify":
        values.update(CLASSIFY_DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        unknown = set(doc) - set(values)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(doc)
    flags = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in vars(args).items() if k in flags})
    if "builtin" in vars(args):
        values["measure"] = None
    return RunConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if cfg.threads < 1 or cfg.n_paths < 1:
            raise ValueError("threads and n_paths must be positive")
        if args.command in ("variance", "classify"):
            cfg.T_grid()
    except (ValueError, TypeError, OSError) as err:
        parser.exit(EXIT_USAGE, f"winding: error: {err}\n")
    if args.print_config:
        print(json.dumps(asdict(cfg), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        return COMMANDS[args.command](cfg)
    except DegenerateMeasureError as err:
        print(f"winding: degenerate measure: {err}", file=sys.stderr)
        return EXIT_DEGENERATE
    except stats.SimulationError as err:
        print(f"winding: simulation failed: {err}", file=sys.stderr)
        return EXIT_SIMULATION
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as err:
        print(f"winding: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
