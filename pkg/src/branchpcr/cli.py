"""Command-line interface: bounds, estimation, simulation, harmonic tables.

One JSON object per invocation on stdout (or CSV with --format csv);
human-oriented diagnostics go to stderr. Exit codes: 0 success, 2 config
error, 3 domain error or failed checks, 4 population cap exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib.resources
import json
import math
import os
import sys

import numpy as np

from . import estimator, harmonic, kinetics, moments, simulator
from .schedule import EfficiencySchedule, build_schedule, derived_sequences

_SEED_ENV = "BRANCHPCR_SEED"


class ConfigError(Exception):
    """Structural problem with the run configuration (exit code 2)."""


@dataclasses.dataclass
class RunConfig:
    s0: int | None = None
    n: int | None = None
    sched: EfficiencySchedule | None = None
    law: moments.MutationLaw | None = None
    ell: int | None = None
    t: float | None = None
    z: float = 2.0
    seed: int | None = None
    replicates: int = 1000
    population_cap: int | None = None


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"config field '{name}' is required for this command")
    return value


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def parse_config(raw: dict) -> RunConfig:
    cfg = RunConfig()
    if "s0" in raw:
        cfg.s0 = int(raw["s0"])
    if "n" in raw:
        cfg.n = int(raw["n"])
    if "z" in raw:
        cfg.z = float(raw["z"])
    if "seed" in raw:
        cfg.seed = int(raw["seed"])
    if "replicates" in raw:
        cfg.replicates = int(raw["replicates"])
    if "population_cap" in raw:
        cfg.population_cap = int(raw["population_cap"])

    sched = raw.get("schedule")
    if sched is not None:
        if not isinstance(sched, dict) or ("lambdas" in sched) == ("mm" in sched):
            raise ConfigError("schedule block needs exactly one of 'lambdas' or 'mm'")
        if "lambdas" in sched:
            cfg.sched = build_schedule(lambdas=sched["lambdas"])
        else:
            mm = sched["mm"]
            if not isinstance(mm, dict) or "C" not in mm or "D" not in mm:
                raise ConfigError("mm schedule block needs 'C' and 'D'")
            cfg.sched = build_schedule(mm_C=float(mm["C"]), mm_D=float(mm["D"]))

    mut = raw.get("mutation")
    if mut is not None:
        if not isinstance(mut, dict):
            raise ConfigError("mutation block must be an object")
        if "poisson" in mut:
            if "mean" in mut or "var" in mut:
                raise ConfigError("mutation block needs exactly one form")
            cfg.law = moments.poisson_law(float(mut["poisson"]["mu"]))
        elif "mean" in mut and "var" in mut:
            cfg.law = moments.MutationLaw(mu=float(mut["mean"]), nu=float(mut["var"]))
        else:
            raise ConfigError("mutation block needs 'poisson' or 'mean'+'var'")

    sample = raw.get("sample")
    if sample is not None:
        if not isinstance(sample, dict) or "ell" not in sample:
            raise ConfigError("sample block needs 'ell'")
        cfg.ell = int(sample["ell"])
        if ("t" in sample) and ("mutations_total" in sample):
            raise ConfigError("sample block needs at most one of 't', 'mutations_total'")
        if "t" in sample:
            cfg.t = float(sample["t"])
        elif "mutations_total" in sample:
            if cfg.ell < 1:
                raise ConfigError("sample ell must be at least 1")
            cfg.t = float(sample["mutations_total"]) / cfg.ell
    return cfg


def _config_from_args(args) -> RunConfig:
    raw = load_config(args.config) if args.config else {}
    cfg = parse_config(raw)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if cfg.seed is None and os.environ.get(_SEED_ENV):
        try:
            cfg.seed = int(os.environ[_SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{_SEED_ENV} is not an integer") from exc
    if cfg.seed is None:
        cfg.seed = 0
    return cfg


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(x) for x in obj]
    return obj


def _emit_json(payload) -> None:
    print(json.dumps(_to_jsonable(payload), sort_keys=True, indent=2))


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _flatten(payload, prefix="") -> list[tuple[str, object]]:
    rows = []
    payload = _to_jsonable(payload)
    if isinstance(payload, dict):
        for key in sorted(payload):
            rows.extend(_flatten(payload[key], f"{prefix}{key}."))
    elif isinstance(payload, list):
        for i, item in enumerate(payload):
            rows.extend(_flatten(item, f"{prefix}{i}."))
    else:
        rows.append((prefix[:-1], payload))
    return rows


def _emit_kv_csv(payload) -> None:
    print("key,value")
    for key, value in _flatten(payload):
        print(f"{key},{_csv_cell(value)}")


def _emit(payload, fmt: str) -> None:
    if fmt == "csv":
        _emit_kv_csv(payload)
    else:
        _emit_json(payload)


def cmd_bounds(args) -> int:
    cfg = _config_from_args(args)
    sched = _require(cfg.sched, "schedule")
    n = _require(cfg.n, "n")
    seqs = derived_sequences(sched, n)
    envelope = None
    if cfg.law is not None and cfg.s0 is not None:
        envelope = moments.moment_envelope(seqs, cfg.law, cfg.s0, n, cfg.ell or 1)
    else:
        print("note: no mutation/s0 block, emitting sequences only", file=sys.stderr)
    if args.format == "csv":
        cols = ["k", "lambda", "alpha", "gamma", "gamma2", "gamma3", "W", "Wp",
                "lambda_star", "v", "vp", "vpp", "u", "up", "upp",
                "u_wide", "up_wide", "upp_wide"]
        print(",".join(cols))
        for k in range(n + 1):
            per_cycle = [None, None] if k == 0 else [seqs.lam[k - 1], seqs.alpha[k - 1]]
            row = [k] + per_cycle + [
                seqs.gamma[k], seqs.gamma_i[2][k], seqs.gamma_i[3][k],
                seqs.W[k], seqs.Wp[k],
                None if k == 0 else seqs.lambda_star[k],
                seqs.v[k], seqs.vp[k], seqs.vpp[k],
                seqs.u[k], seqs.up[k], seqs.upp[k],
                seqs.u_wide[k], seqs.up_wide[k], seqs.upp_wide[k],
            ]
            print(",".join(_csv_cell(x) for x in row))
        return 0
    payload = {
        "n": n,
        "sequences": {
            "lambda": seqs.lam, "alpha": seqs.alpha, "gamma": seqs.gamma,
            "gamma2": seqs.gamma_i[2], "gamma3": seqs.gamma_i[3],
            "W": seqs.W, "Wp": seqs.Wp,
            "lambda_star": seqs.lambda_star,
            "v": seqs.v, "vp": seqs.vp, "vpp": seqs.vpp,
            "u": seqs.u, "up": seqs.up, "upp": seqs.upp,
            "u_wide": seqs.u_wide, "up_wide": seqs.up_wide, "upp_wide": seqs.upp_wide,
        },
        "envelope": envelope,
    }
    _emit_json(payload)
    return 0


def _golden_fixture() -> dict:
    ref = importlib.resources.files("branchpcr").joinpath("data/golden_saiki.json")
    return json.loads(ref.read_text(encoding="utf-8"))


def run_golden_checks() -> tuple[list[dict], bool]:
    """Recompute the built-in reference analysis and diff against pinned values."""
    fx = _golden_fixture()
    cfg = parse_config(fx["config"])
    seqs = derived_sequences(cfg.sched, cfg.n)
    exp = fx["expected"]
    tol = fx["tolerances"]
    report = estimator.estimate_report(cfg.t, seqs, cfg.s0, cfg.n, cfg.ell, cfg.z)
    checks = []

    def check(name, computed, expected, tolerance):
        ok = abs(computed - expected) <= tolerance
        checks.append({
            "name": name, "computed": computed, "expected": expected,
            "tol": tolerance, "pass": bool(ok),
        })

    check("W", float(seqs.W[cfg.n]), exp["W"], tol["W"])
    check("Wp", float(seqs.Wp[cfg.n]), exp["Wp"], tol["Wp"])
    check("v", float(seqs.v[cfg.n]), exp["v"], tol["v"])
    check("vpp", float(seqs.vpp[cfg.n]), exp["vpp"], tol["vpp"])
    check("mu_star", report.mu_star, exp["mu_star"], tol["mu_star"])
    check("sigma_star", report.sigma_star, exp["sigma_star"], tol["sigma_star"])
    check("ci_lo", report.ci_lo, exp["ci"][0], tol["ci"])
    check("ci_hi", report.ci_hi, exp["ci"][1], tol["ci"])
    for s0_key, (blo, bhi) in exp["brackets"].items():
        lo, hi = estimator.finite_population_bracket(cfg.t, seqs, int(s0_key), cfg.n)
        check(f"bracket_lo_s0_{s0_key}", lo, blo, tol["bracket"])
        check(f"bracket_hi_s0_{s0_key}", hi, bhi, tol["bracket"])
    return checks, all(c["pass"] for c in checks)


def cmd_estimate(args) -> int:
    if args.golden_saiki:
        checks, ok = run_golden_checks()
        for c in checks:
            status = "ok  " if c["pass"] else "FAIL"
            print(f"{status} {c['name']}: computed {c['computed']:.7f}, "
                  f"expected {c['expected']} ±{c['tol']}", file=sys.stderr)
        _emit({"checks": checks, "all_pass": ok}, args.format)
        return 0 if ok else 3
    cfg = _config_from_args(args)
    sched = _require(cfg.sched, "schedule")
    n = _require(cfg.n, "n")
    s0 = _require(cfg.s0, "s0")
    ell = _require(cfg.ell, "sample.ell")
    t = _require(cfg.t, "sample.t or sample.mutations_total")
    seqs = derived_sequences(sched, n)
    report = estimator.estimate_report(t, seqs, s0, n, ell, cfg.z, strict=args.strict)
    print(report.text(), file=sys.stderr)
    _emit(report, args.format)
    return 0


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    sched = _require(cfg.sched, "schedule")
    n = _require(cfg.n, "n")
    s0 = _require(cfg.s0, "s0")
    law = _require(cfg.law, "mutation")
    ell = cfg.ell or 1
    spec = simulator.ProcessSpec(sched=sched, law=law, S0=s0)
    deterministic = sched.kind == "deterministic"
    collect = bool(args.tv) and law.integer_valued and deterministic
    print(f"simulating {cfg.replicates} replicates (seed {cfg.seed}, "
          f"threads {args.threads})", file=sys.stderr)
    cap_kw = {} if cfg.population_cap is None else {"population_cap": cfg.population_cap}
    mc = simulator.monte_carlo_moments(
        spec, n, ell, cfg.replicates, cfg.seed,
        threads=args.threads, collect_histogram=collect, **cap_kw,
    )
    payload = {
        "replicates": mc.replicates, "n": n, "ell": ell, "seed": cfg.seed,
        "t_mean": mc.t_mean, "t_se": mc.t_se,
        "M_mean": mc.M_mean, "M_se": mc.M_se,
        "D_mean": mc.D_mean,
        "size_mean": mc.size_mean, "size_se": mc.size_se,
        "martingale_mean": mc.martingale_mean, "martingale_se": mc.martingale_se,
    }
    variance_fields = {
        "t_var": mc.t_var, "t_var_se": mc.t_var_se,
        "M_var": mc.M_var, "M_var_se": mc.M_var_se,
    }
    if mc.replicates < 2:
        payload.update({k: None for k in variance_fields})
    else:
        payload.update(variance_fields)
    payload["martingale_check"] = (
        "pass" if abs(mc.martingale_mean - s0) <= 4.0 * mc.martingale_se or
        mc.martingale_se == 0.0 else "fail"
    )
    if deterministic:
        seqs = derived_sequences(sched, n)
        env = moments.moment_envelope(seqs, law, s0, n, ell)
        flags = {
            "Et": "pass" if env.Et_lo - 4 * mc.t_se <= mc.t_mean <= env.Et_hi + 4 * mc.t_se
            else "fail",
        }
        if mc.replicates >= 2:
            flags["Vt"] = (
                "pass" if env.Vt_lo - 4 * mc.t_var_se <= mc.t_var <= env.Vt_hi + 4 * mc.t_var_se
                else "fail"
            )
            flags["Rn"] = "pass" if mc.M_var <= env.Rn_hi + 4 * mc.M_var_se else "fail"
        payload["envelope"] = env
        payload["envelope_flags"] = flags
        if collect and mc.eta_hist is not None:
            values, probs = simulator.eta_star_distribution(seqs, law, n)
            support = {int(v) for v in values} | set(mc.eta_hist)
            tv = 0.5 * sum(
                abs(mc.eta_hist.get(m, 0.0)
                    - (probs[m] if 0 <= m < len(probs) else 0.0))
                for m in support
            )
            mc_err = 0.5 * sum(mc.eta_hist_sd.values()) / math.sqrt(mc.replicates)
            payload["tv"] = {
                "distance": tv, "mc_error": mc_err, "bound": env.TV_hi,
                "check": "pass" if tv <= env.TV_hi + 4 * mc_err else "fail",
            }
    else:
        payload["envelope"] = None
        print("note: envelopes need a deterministic schedule", file=sys.stderr)
    _emit(payload, args.format)
    return 0


def cmd_harmonic(args) -> int:
    if args.property_check:
        kwargs = {}
        if args.k_max is not None:
            kwargs["k_max"] = args.k_max
        violations = harmonic.inequality_violations(**kwargs)
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        _emit({"violations": violations, "count": len(violations)}, args.format)
        return 0 if not violations else 3
    k_max = 12 if args.k_max is None else args.k_max
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    lambdas = [float(x) for x in args.lambdas.split(",")] if args.lambdas else [0.1, 0.3, 0.5, 0.7, 0.9]
    rows = []
    for lam in lambdas:
        for k in range(1, k_max + 1):
            fam = harmonic.B_family(k, lam)
            row = {
                "k": k, "lambda": lam, "H": fam.H, "A": fam.A, "G": fam.G,
                "B": fam.B, "Bp": fam.Bp, "Bpp": fam.Bpp, "B1": fam.B1, "B2": fam.B2,
            }
            if args.y is not None:
                cf = harmonic.C_family(k, lam, args.y)
                row.update({"C": cf.C, "Cp": cf.Cp, "Cpp": cf.Cpp, "Hy": cf.Hy})
            rows.append(row)
    if args.format == "json":
        _emit_json({"rows": rows})
    else:
        cols = ["k", "lambda", "H", "A", "G", "B", "Bp", "Bpp", "B1", "B2"]
        if args.y is not None:
            cols += ["C", "Cp", "Cpp", "Hy"]
        print(",".join(cols))
        for row in rows:
            print(",".join(_csv_cell(row[c]) for c in cols))
    return 0


def cmd_mm(args) -> int:
    cfg = _config_from_args(args)
    n = _require(cfg.n, "n")
    s0 = _require(cfg.s0, "s0")
    sched = _require(cfg.sched, "schedule")
    if sched.kind != "michaelis_menten":
        raise ConfigError("mm command needs a schedule block of the 'mm' form")
    params = kinetics.MMParams(C=sched.mm_C, D=sched.mm_D, S0=s0)
    wb = kinetics.w_bounds(params, n)
    payload = {
        "n": n, "C": params.C, "D": params.D, "s0_scaled": params.s0, "b": params.b,
        "w_lower": wb.lower, "w_plus": wb.w_plus, "w_star": wb.w_star,
        "w_upper": wb.upper,
    }
    if cfg.law is not None:
        lo, hi = kinetics.random_efficiency_envelope(params, cfg.law, n)
        payload["Et_lo"] = lo
        payload["Et_hi"] = hi
    _emit(payload, args.format)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchpcr",
        description="Certified moment bounds, estimation and simulation for "
                    "branching amplification processes with mutations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("bounds", help="derived sequences and moment envelopes")
    common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("estimate", help="mutation-rate estimate from a sample mean")
    common(p)
    p.add_argument("--strict", action="store_true",
                   help="intersect the sharper two-founder upper route")
    p.add_argument("--golden-saiki", action="store_true",
                   help="run the built-in reference-analysis fixture and diff")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo replicates with envelope checks")
    common(p, seed=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--tv", action="store_true",
                   help="pooled total-variation report (integer laws only)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("harmonic", help="harmonic-family tables and property checks")
    common(p)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--lambdas", help="comma-separated efficiency grid")
    p.add_argument("--y", type=float, default=None, help="shift for the C-family columns")
    p.add_argument("--property-check", action="store_true",
                   help="re-run the inequality suite; exit 0 when clean")
    p.set_defaults(func=cmd_harmonic)

    p = sub.add_parser("mm", help="saturating-efficiency envelopes")
    common(p)
    p.set_defaults(func=cmd_mm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except simulator.PopulationCapExceeded as exc:
        _emit_json({
            "error": "population_cap",
            "gen": exc.gen,
            "size": exc.size,
            "completed_cycles": len(exc.trajectory) - 1,
            "partial_sizes": [s.size for s in exc.trajectory],
        })
        print(f"population cap exceeded: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, TypeError) as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
