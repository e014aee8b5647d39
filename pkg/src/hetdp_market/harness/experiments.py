"""Experiment runners: gamma sweep, loss scaling in m, online/offline competitive ratio.

Every runner returns plain tables (lists of rows with a header) plus a
manifest, and writes them as CSV / JSON when an output directory is given.
Cells are run in a fixed order, so reruns with the same config are bit-exact.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core_types import HyperParams, InvalidData, PrivacyAllocation, RngSpec
from ..dp_logreg import NoiseVector, fit
from ..gen_bounds import proxy_loss
from ..joint_optimizer import fit_joint
from ..offline_mechanism import run_offline_mechanism, solve_allocation
from ..online_mechanism import OnlineConfig, online_epsilon
from ..payments import virtual_payments
from ..sensitivity import from_dict
from . import io
from .synthetic import SyntheticSpec, generate_synthetic, misclassification_rate, split


@dataclass(frozen=True)
class ExperimentConfig:
    params: HyperParams = field(default_factory=HyperParams)
    dist: dict = field(default_factory=lambda: {"family": "uniform", "low": 0.0, "high": 1.0})
    data: str | None = None
    synthetic: dict | None = None
    gammas: tuple = ()
    ms: tuple = ()
    seeds: int = 15
    seed: int = 0
    out_dir: str | None = None
    train_frac: float = 0.8
    candidates: tuple = ()
    # how many replicate seeds / audit details; free-form per runner
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seeds < 1:
            raise InvalidData("seeds must be at least 1")
        if not 0 < self.train_frac < 1:
            raise InvalidData("train_frac must lie in (0, 1)")
        if self.data is not None and self.synthetic is not None:
            raise InvalidData("give either a data path or a synthetic spec, not both")
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "ms", tuple(int(m) for m in self.ms))
        if any(g < 0 for g in self.gammas):
            raise InvalidData("gamma values must be non-negative")
        if any(m < 1 for m in self.ms):
            raise InvalidData("m values must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        params = io.read_params(d.pop("params", {}))
        cands = tuple(io.read_params({**params.to_dict(), **c}) for c in d.pop("candidates", ()))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidData(f"unknown config keys {sorted(unknown)}")
        return cls(params=params, candidates=cands, **d)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "dist": self.dist,
            "data": self.data,
            "synthetic": self.synthetic,
            "gammas": list(self.gammas),
            "ms": list(self.ms),
            "seeds": self.seeds,
            "seed": self.seed,
            "train_frac": self.train_frac,
            "candidates": [c.to_dict() for c in self.candidates],
            "options": self.options,
        }

    def distribution(self):
        return from_dict(self.dist)

    def dataset(self):
        if self.data is not None:
            return io.read_dataset(self.data)
        if self.synthetic is None:
            raise InvalidData("config needs a data path or a synthetic spec")
        s = self.synthetic
        spec = SyntheticSpec(int(s["m"]), int(s["n"]), float(s["rho"]), s.get("w_star"))
        return generate_synthetic(spec, RngSpec(self.seed))


def load_config(path):
    return ExperimentConfig.from_dict(io.read_json(path))


def trend_violations(values, direction):
    """Adjacent pairs that break a non-increasing ("down") or non-decreasing ("up") trend."""
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    if direction == "down":
        return int(np.sum(d > 0))
    if direction == "up":
        return int(np.sum(d < 0))
    raise ValueError("direction must be 'up' or 'down'")


def loglog_slope(ms, losses):
    """Least-squares slope of log(loss) against log(m)."""
    x = np.log(np.asarray(ms, dtype=float))
    y = np.log(np.asarray(losses, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _write(out_dir, name, header, rows):
    if out_dir:
        io.write_table(os.path.join(out_dir, name), header, rows)


def _finish(cfg, out_dir, result):
    result["manifest"] = io.manifest(cfg.to_dict(), cfg.seed)
    if out_dir:
        io.write_json(os.path.join(out_dir, "manifest.json"), result["manifest"])
    return result


def baseline_error(train, test, lambda_reg):
    """Held-out error of the plain weighted fit (uniform weights, no noise, no payments)."""
    m = train.m
    alloc = PrivacyAllocation(np.full(m, 1.0 / m), 1.0, np.full(m, 1.0 / m))
    noise = NoiseVector(np.zeros(train.n), 1.0, 0.0)
    rep = fit(train, alloc, lambda_reg, RngSpec(0), noise=noise)
    return misclassification_rate(rep.weights, test)


SWEEP_HEADER = ["gamma", "variant", "seed", "misclassification", "payments", "overall", "eps_avg",
                "converged", "payment_term_absent"]
SUMMARY_HEADER = ["gamma", "variant", "misclassification_median", "payments_median",
                  "overall_median", "misclassification_mean", "payments_mean", "overall_mean"]


def gamma_sweep(cfg, out_dir=None):
    """Regularised and naive (mu = sigma = 0) joint fits over the gamma list.

    Sensitivities are drawn once; each replicate seed draws a fresh noise
    vector b shared by both variants. Payments are the virtual payments
    sum eps_i psi(c_i) of the fitted allocation.
    """
    if not cfg.gammas:
        raise InvalidData("gamma sweep needs a non-empty gamma list")
    out_dir = out_dir or cfg.out_dir
    dist = cfg.distribution()
    D = cfg.dataset()
    root = RngSpec(cfg.seed)
    train, test = split(D, cfg.train_frac, root)
    params = cfg.params
    if cfg.candidates:
        val_train, val = split(train, cfg.train_frac, RngSpec(cfg.seed + 1))
        params = select_hyperparams(list(cfg.candidates), val_train, val, cfg, root)
    c = dist.sample(train.m, root)
    opts = cfg.options
    tol = float(opts.get("tol", 1e-8))
    rows = []
    for g in cfg.gammas:
        for variant in ("regularized", "naive"):
            for s in range(cfg.seeds):
                rng = root.child(s)
                sol = fit_joint(train, c, params, dist, rng, tol=tol, naive=variant == "naive",
                                gamma=g)
                err = misclassification_rate(sol.weights, test)
                pay = virtual_payments(c, sol.epsilon, params, dist)
                rows.append([g, variant, s, err, pay, err + g * pay, sol.eps_avg, sol.converged, g == 0])
    summary = []
    for g in cfg.gammas:
        for variant in ("regularized", "naive"):
            sel = np.array([r[3:6] for r in rows if r[0] == g and r[1] == variant], dtype=float)
            summary.append([g, variant, *np.median(sel, axis=0), *np.mean(sel, axis=0)])
    base = baseline_error(train, test, params.lambda_reg)

    def col(variant, j):
        return [r[j] for r in summary if r[1] == variant]

    reg_overall, naive_overall = col("regularized", 4), col("naive", 4)
    trends = {
        "payments_violations": trend_violations(col("regularized", 3), "down"),
        "misclassification_violations": trend_violations(col("regularized", 2), "up"),
        "regularized_wins": int(sum(r <= n for r, n in zip(reg_overall, naive_overall))),
        "n_gamma": len(cfg.gammas),
    }
    _write(out_dir, "gamma_sweep.csv", SWEEP_HEADER, rows)
    _write(out_dir, "gamma_sweep_summary.csv", SUMMARY_HEADER, summary)
    result = {"rows": rows, "summary": summary, "baseline": base, "trends": trends,
              "params": params.to_dict()}
    if out_dir:
        io.write_json(os.path.join(out_dir, "gamma_sweep_trends.json"),
                      {"baseline": base, **trends, "params": params.to_dict()})
    return _finish(cfg, out_dir, result)


def scaling_experiment(cfg, out_dir=None):
    """Optimal proxy loss against m, with the log-log slope of the mean loss.

    The cap is set to k = m (never binding), so the loss is the uncapped
    optimum whose rate is being measured.
    """
    if not cfg.ms:
        raise InvalidData("scaling experiment needs a non-empty m list")
    out_dir = out_dir or cfg.out_dir
    dist = cfg.distribution()
    root = RngSpec(cfg.seed)
    rows = []
    for m in cfg.ms:
        p = cfg.params.with_(k=float(m))
        for s in range(cfg.seeds):
            c = dist.sample(m, root.child(s).child(m))
            res = solve_allocation(c, p, dist)
            rows.append([m, s, res.loss])
    table = []
    for m in cfg.ms:
        v = np.array([r[2] for r in rows if r[0] == m])
        table.append([m, float(v.mean()), float(np.median(v)), float(v.std(ddof=1)) if v.size > 1 else 0.0])
    slope = loglog_slope([t[0] for t in table], [t[1] for t in table])
    _write(out_dir, "scaling.csv", ["m", "seed", "proxy_loss"], rows)
    _write(out_dir, "scaling_summary.csv", ["m", "mean", "median", "std"], table)
    result = {"rows": rows, "table": table, "slope": slope}
    if out_dir:
        io.write_json(os.path.join(out_dir, "scaling_slope.json"), {"slope": slope})
    return _finish(cfg, out_dir, result)


def competitive_ratio_experiment(cfg, out_dir=None):
    """Online over offline proxy loss on the same sensitivity draws.

    The offline cap is k = m so both mechanisms face the same feasible set
    (the online rule imposes no cap).
    """
    if not cfg.ms:
        raise InvalidData("competitive ratio needs a non-empty m list")
    out_dir = out_dir or cfg.out_dir
    dist = cfg.distribution()
    root = RngSpec(cfg.seed)
    rows = []
    for m in cfg.ms:
        p = cfg.params.with_(k=float(m))
        ocfg = OnlineConfig(m_planned=m, density_at_zero=cfg.options.get("density_at_zero"))
        for s in range(cfg.seeds):
            c = dist.sample(m, root.child(s).child(m))
            off = solve_allocation(c, p, dist).loss
            eps = online_epsilon(c, p, ocfg, dist)
            on = proxy_loss(c, eps, p.mu, p.sigma, p.gamma, dist)
            rows.append([m, s, on, off, on / off])
    table = []
    for m in cfg.ms:
        r = np.array([x[4] for x in rows if x[0] == m])
        table.append([m, float(np.median(r)), float(r.mean()), float(r.min())])
    med = [t[1] for t in table]
    trend = {"violations": trend_violations(med, "down"), "first": med[0], "last": med[-1]}
    _write(out_dir, "competitive_ratio.csv", ["m", "seed", "online", "offline", "ratio"], rows)
    _write(out_dir, "competitive_ratio_summary.csv", ["m", "median", "mean", "min"], table)
    result = {"rows": rows, "table": table, "trend": trend}
    return _finish(cfg, out_dir, result)


def select_hyperparams(candidates, train, val, cfg, rng, payments="identity"):
    """Candidate with the lowest validation misclassification + gamma * total payment.

    Each candidate runs the offline mechanism on ``train`` with the same
    sensitivity draw and noise seed; ties keep the earliest candidate.
    """
    if not candidates:
        raise InvalidData("need at least one candidate")
    if len(candidates) == 1:
        return candidates[0]
    dist = cfg.distribution()
    c = dist.sample(train.m, rng, stream="validation-sensitivities")
    best, best_score = None, math.inf
    for p in candidates:
        out = run_offline_mechanism(train, c, p, dist, rng, payments=payments == "identity")
        if out.allocation is None:
            continue
        total = (float(out.payments.t.sum()) if payments == "identity"
                 else virtual_payments(c, out.allocation.epsilon, p, dist))
        score = misclassification_rate(out.weights, val) + p.gamma * total
        if score < best_score:
            best, best_score = p, score
    return best if best is not None else candidates[0]


RUNNERS = {
    "gamma-sweep": gamma_sweep,
    "scaling": scaling_experiment,
    "competitive-ratio": competitive_ratio_experiment,
}


def run(kind, cfg, out_dir=None):
    try:
        runner = RUNNERS[kind]
    except KeyError:
        raise InvalidData(f"unknown experiment {kind!r}") from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return runner(cfg, out_dir)


__all__ = [
    "ExperimentConfig",
    "baseline_error",
    "competitive_ratio_experiment",
    "gamma_sweep",
    "load_config",
    "loglog_slope",
    "run",
    "scaling_experiment",
    "select_hyperparams",
    "trend_violations",
]
