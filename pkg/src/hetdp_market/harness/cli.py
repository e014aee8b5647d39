"""Command line entry point (``hetdp``)."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from ..core_types import (
    MarketError,
    MechanismOutcome,
    PaymentSchedule,
    PrivacyAllocation,
    RngSpec,
    SensitivityProfile,
)
from ..joint_optimizer import fit_joint
from ..offline_mechanism import run_offline_mechanism
from ..online_mechanism import OnlineConfig, run_online_mechanism
from ..payments import QuadratureConfig, audit_mechanism, payment_identity_check
from . import io
from .experiments import load_config, run


def _dist_for(args, params_path, fallback=None):
    """Distribution from --dist, else a "dist" entry of the params file, else the fallback."""
    if getattr(args, "dist", None):
        return io.read_dist(args.dist)
    raw = io.read_json(params_path)
    if "dist" in raw:
        return io.read_dist(raw["dist"])
    if fallback is not None:
        return fallback
    raise MarketError("a sensitivity CSV needs a distribution: pass --dist <json>")


def _params(path):
    raw = io.read_json(path)
    raw.pop("dist", None)
    return io.read_params(raw)


def _sens(path, m, rng):
    prof, dist = io.read_sensitivities(path, m, rng)
    if len(prof) != m:
        raise MarketError(f"{len(prof)} sensitivities for {m} data rows")
    return prof, dist


def cmd_mechanism(args):
    D = io.read_dataset(args.data)
    params = _params(args.params)
    rng = RngSpec(args.seed)
    if args.kind == "offline":
        c, dist = _sens(args.sens, D.m, rng)
        dist = _dist_for(args, args.params, dist)
        out = run_offline_mechanism(D, c, params, dist, rng, QuadratureConfig())
    else:
        c, dist = _sens(args.stream, D.m, rng)
        dist = _dist_for(args, args.params, dist)
        cfg = OnlineConfig(m_planned=args.m_planned)
        out = run_online_mechanism(D, c, params, cfg, dist, rng)
    io.write_json(args.out, out.to_json_dict())
    return 0


def cmd_fit_joint(args):
    D = io.read_dataset(args.data)
    params = _params(args.params)
    rng = RngSpec(args.seed)
    c, dist = _sens(args.sens, D.m, rng)
    dist = _dist_for(args, args.params, dist)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        sol = fit_joint(D, c, params, dist, rng)
    eps = sol.epsilon
    psi = dist.psi(c.c)
    # payments here are the virtual payments eps_i psi(c_i); they depend on the data
    pay = np.where(eps > 0, eps * np.where(np.isfinite(psi), psi, 0.0), 0.0)
    out = MechanismOutcome(
        PrivacyAllocation(sol.a, sol.eta, eps),
        PaymentSchedule(pay),
        sol.weights,
        {
            "delta": None,
            "lambda": None,
            "proxy_loss": sol.objective,
            "seed": args.seed,
            "eps_avg": sol.eps_avg,
            "objective": sol.objective,
            "convexity_margin": sol.convexity_margin,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "payments_kind": "virtual",
            "privacy_leak_caveat": sol.privacy_leak_caveat,
            "warnings": [str(w.message) for w in caught],
        },
    )
    io.write_json(args.out, out.to_json_dict())
    return 0


def cmd_experiment(args):
    cfg = load_config(args.config)
    res = run(args.kind, cfg, args.out_dir)
    summary = {k: v for k, v in res.items() if k in ("slope", "trend", "trends", "baseline")}
    print(json.dumps(io._clean(summary), indent=2))
    return 0


AUDIT_DEFAULTS = {"m": 20, "seed": 0, "draws": 10000, "misreports": 64,
                  "ic_tol": 1e-5, "ir_tol": 1e-8, "gap_tol": 0.02}


def cmd_audit(args):
    raw = io.read_json(args.config)
    unknown = set(raw) - set(AUDIT_DEFAULTS) - {"params", "dist", "c"}
    if unknown:
        raise MarketError(f"unknown audit keys {sorted(unknown)}")
    cfg = {**AUDIT_DEFAULTS, **raw}
    params = io.read_params(cfg.get("params", {}))
    dist = io.read_dist(cfg.get("dist", {"family": "uniform", "low": 0.0, "high": 1.0}))
    rng = RngSpec(int(cfg["seed"]))
    if args.kind == "payment-identity":
        gap = payment_identity_check(dist, params, int(cfg["m"]), int(cfg["draws"]), rng)
        report = {"gap": gap, "pass": gap < cfg["gap_tol"]}
    else:
        c = (SensitivityProfile(np.asarray(cfg["c"], dtype=float)) if "c" in cfg
             else SensitivityProfile(dist.sample(int(cfg["m"]), rng)))
        rep = audit_mechanism(c, params, dist, QuadratureConfig(), int(cfg["misreports"]))
        if args.kind == "ic":
            worst = rep.worst_violation
            report = {"worst_violation": worst, "scale": rep.scale,
                      "relative": worst / rep.scale if rep.scale > 0 else worst,
                      "pass": worst <= cfg["ic_tol"] * rep.scale}
        else:
            report = {"worst_cost_at_truth": rep.worst_ir, "pass": rep.worst_ir <= cfg["ir_tol"]}
    print(json.dumps(io._clean(report), indent=2))
    return 0 if report["pass"] else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="hetdp", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    mech = sub.add_parser("mechanism", help="run the offline or online mechanism")
    msub = mech.add_subparsers(dest="kind", required=True)
    off = msub.add_parser("offline")
    off.add_argument("--data", required=True)
    off.add_argument("--sens", required=True, help="CSV of reports or a distribution JSON")
    off.add_argument("--params", required=True)
    off.add_argument("--seed", type=int, required=True)
    off.add_argument("--out", required=True)
    off.add_argument("--dist", help="distribution JSON (needed when --sens is a CSV)")
    on = msub.add_parser("online")
    on.add_argument("--data", required=True)
    on.add_argument("--stream", required=True, help="CSV of arrivals or a distribution JSON")
    on.add_argument("--m-planned", type=int, required=True)
    on.add_argument("--params", required=True)
    on.add_argument("--seed", type=int, required=True)
    on.add_argument("--out", required=True)
    on.add_argument("--dist", help="distribution JSON (needed when --stream is a CSV)")
    mech.set_defaults(func=cmd_mechanism)

    fitp = sub.add_parser("fit", help="joint fit of weights and privacy weights")
    fsub = fitp.add_subparsers(dest="kind", required=True)
    joint = fsub.add_parser("joint")
    joint.add_argument("--data", required=True)
    joint.add_argument("--sens", required=True)
    joint.add_argument("--params", required=True)
    joint.add_argument("--seed", type=int, required=True)
    joint.add_argument("--out", required=True)
    joint.add_argument("--dist", help="distribution JSON (needed when --sens is a CSV)")
    fitp.set_defaults(func=cmd_fit_joint)

    exp = sub.add_parser("experiment", help="run an experiment from a config file")
    exp.add_argument("kind", choices=["gamma-sweep", "scaling", "competitive-ratio"])
    exp.add_argument("--config", required=True)
    exp.add_argument("--out-dir", required=True)
    exp.set_defaults(func=cmd_experiment)

    aud = sub.add_parser("audit", help="IC / IR / payment-identity audits")
    aud.add_argument("kind", choices=["ic", "ir", "payment-identity"])
    aud.add_argument("--config", required=True)
    aud.set_defaults(func=cmd_audit)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MarketError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
