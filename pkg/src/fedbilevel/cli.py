"""Experiment runner: JSON configs in, CSV metrics and a JSON manifest out.

Config schema (JSON object):
  problem:  generator ('overparam-ls' | 'weak-sharp') plus its arguments
  method:   name ('fedavg' | 'scaffold' | 'agm' | 'two-loop') plus options
  schedule: rule, R, K, S, p, a, b, Gamma, eta/gamma overrides, clamp
  metrics:  oracle (bool), err_eta (bool)
  output:   dir
  seed:     int
  sweep:    optional, e.g. {"eta": [1e-4, 1e-2, 1, "rule"]}

Exit codes: 0 success, 2 config schema violation, 3 divergence at runtime.
The wallclock column is always emitted empty so output stays byte-identical
across repeated runs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .centralized import run_agm_convex, run_agm_strongly_convex, solve_reg_problem
from .fedsim import DivergenceError, run_training
from .nonconvex import OuterConfig, run_two_loop
from .oracles import bilevel_reference
from .problems import LocalObjective, make_overparam_ls, make_weak_sharp_instance
from .regularize import TheoremBoundInputs, compose, make_schedule, theorem1_bounds

CSV_HEADER = ["round", "f_bar", "h_bar", "f_gap", "h_gap", "dist", "err_eta", "wallclock_ms"]
TWO_LOOP_HEADER = ["t", "R_t", "grad_map_sq", "dist_x_eta", "F", "inner_h_gap", "wallclock_ms"]

METHODS = ("fedavg", "scaffold", "agm", "two-loop")


class ConfigError(ValueError):
    """Schema violation; carries the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _section(config: dict, name: str, required: bool = True) -> dict:
    value = config.get(name)
    if value is None:
        if required:
            raise ConfigError(name, "section is required")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(name, "must be an object")
    return value


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(str(path), "top level must be an object")
    return config


def build_problem(section: dict):
    generator = section.get("generator")
    if generator == "overparam-ls":
        for key in ("n", "m", "clients"):
            if key not in section:
                raise ConfigError(f"problem.{key}", "required for overparam-ls")
        return make_overparam_ls(
            n=int(section["n"]),
            m=int(section["m"]),
            n_clients=int(section["clients"]),
            seed=int(section.get("seed", 0)),
            outer=section.get("outer", "min-norm"),
            outer_mu=float(section.get("outer_mu", 0.1)),
            outer_eps=float(section.get("outer_eps", 0.5)),
        )
    if generator == "weak-sharp":
        return make_weak_sharp_instance(
            kind=section.get("kind", "l2-residual"),
            seed=int(section.get("seed", 0)),
            m=int(section.get("m", 2)),
            n=int(section.get("n", 3)),
        )
    raise ConfigError("problem.generator", f"unknown generator {generator!r}")


def resolve_schedule(config: dict, instance, eta_override=None):
    sched = _section(config, "schedule")
    rule = sched.get("rule", "fedavg-sc")
    eta = sched.get("eta")
    if eta_override is not None:
        eta = None if eta_override == "rule" else float(eta_override)
    try:
        return make_schedule(
            rule,
            instance,
            R=int(sched.get("R", 100)),
            K=int(sched.get("K", 1)),
            S=sched.get("S"),
            p=float(sched.get("p", 2.0)),
            Gamma=float(sched.get("Gamma", 0.0)),
            a=sched.get("a"),
            b=sched.get("b"),
            eta=eta,
            gamma_local=sched.get("gamma_local"),
            gamma_global=sched.get("gamma_global"),
            clamp=bool(sched.get("clamp", False)),
        )
    except ValueError as exc:
        raise ConfigError("schedule", str(exc)) from exc


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _bound_report(instance, schedule, err_eta):
    sharp = instance.sharpness
    gt = instance.ground_truth
    if gt is None or gt.x_star is None or err_eta is None:
        return None
    outer_kind = "shifted-norm" if "center" in instance.meta else "min-norm"
    try:
        _, _, _, grad_norm = bilevel_reference(instance, outer_kind)
    except ValueError:
        return None
    M = instance.f_value(gt.x_star) - 0.0  # f* >= inf f = 0 for the norm outers
    inputs = TheoremBoundInputs(
        err_eta=err_eta,
        M=max(M, 1e-12),
        mu_f=instance.mu_f,
        grad_norm_at_star=grad_norm,
        alpha=None if sharp is None else sharp.alpha,
        kappa=None if sharp is None else sharp.kappa,
    )
    return theorem1_bounds(inputs, schedule.eta).to_dict()


def _run_federated(config, instance, out_dir: Path, tag: str, eta_override=None) -> dict:
    method = _section(config, "method")
    name = method.get("name", "fedavg")
    schedule = resolve_schedule(config, instance, eta_override)
    metrics_cfg = _section(config, "metrics", required=False)
    oracle = bool(metrics_cfg.get("oracle", True))
    want_err = bool(metrics_cfg.get("err_eta", False))
    f_eta_star = None
    if want_err:
        _, f_eta_star = solve_reg_problem(compose(instance, schedule.eta))
    result = run_training(
        instance,
        schedule,
        method=name,
        seed=int(config.get("seed", 0)),
        batch=method.get("batch"),
        scaffold_option=method.get("scaffold_option", "ii"),
        oracle_metrics=oracle,
        f_eta_star=f_eta_star,
        workers=int(method.get("workers", 1)),
    )
    rows = [
        [r["round"], r["f_bar"], r["h_bar"], r["f_gap"], r["h_gap"], r["dist"], r["err_eta"], None]
        for r in result.records
    ]
    csv_path = out_dir / f"metrics-{tag}.csv"
    _write_csv(csv_path, CSV_HEADER, rows)
    err_eta = result.records[-1]["err_eta"] if result.records else None
    manifest = {
        "method": name,
        "schedule": schedule.to_dict(),
        "clamped": schedule.clamped,
        "cap_exceeded": schedule.cap_exceeded,
        "seed": int(config.get("seed", 0)),
        "bound_report": _bound_report(instance, schedule, err_eta),
        "version": _version(),
        "csv": csv_path.name,
    }
    manifest["config_hash"] = _config_hash(manifest["schedule"])
    with open(out_dir / f"manifest-{tag}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return manifest


def _run_agm(config, instance, out_dir: Path, tag: str, eta_override=None) -> dict:
    method = _section(config, "method")
    sched = _section(config, "schedule", required=False)
    eta = sched.get("eta", 0.1)
    if eta_override is not None and eta_override != "rule":
        eta = eta_override
    eta = float(eta)
    K = int(method.get("K", sched.get("R", 100)))
    obj = compose(instance, eta)
    runner = run_agm_strongly_convex if obj.mu > 0 else run_agm_convex
    res = runner(obj, np.zeros(instance.n), K, collect_iterates=True)
    from .oracles import metrics as oracle_metrics

    rows = []
    for k, x in enumerate(res.trajectory[1:], start=1):
        m = oracle_metrics(instance, x)
        rows.append([k, m["f"], m["h"], m["f_gap"], m["h_gap"], m["dist"], None, None])
    csv_path = out_dir / f"metrics-{tag}.csv"
    _write_csv(csv_path, CSV_HEADER, rows)
    manifest = {
        "method": "agm",
        "eta": eta,
        "K": K,
        "seed": int(config.get("seed", 0)),
        "version": _version(),
        "csv": csv_path.name,
    }
    manifest["config_hash"] = _config_hash({"eta": eta, "K": K})
    with open(out_dir / f"manifest-{tag}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return manifest


def _run_two_loop(config, instance, out_dir: Path, tag: str) -> dict:
    method = _section(config, "method")
    outer = method.get("outer", "moreau-lsp")
    if outer == "moreau-lsp":
        f_outer = LocalObjective(
            kind="moreau-lsp",
            mu=float(method.get("outer_mu", 0.1)),
            eps=float(method.get("outer_eps", 0.5)),
        )
    elif outer == "moreau-l1":
        f_outer = LocalObjective(kind="moreau-l1", mu=float(method.get("outer_mu", 0.1)))
    elif outer == "zero":
        f_outer = LocalObjective(kind="zero")
    else:
        raise ConfigError("method.outer", f"unknown two-loop outer {outer!r}")
    cfg = OuterConfig(
        lam=float(method.get("lambda", 0.5)),
        gamma=method.get("gamma"),
        T=int(method.get("T", 100)),
        K=int(method.get("K", 1)),
        S=method.get("S"),
    )
    res = run_two_loop(instance, f_outer, cfg, seed=int(config.get("seed", 0)))
    rows = [
        [r["t"], r["R_t"], r["grad_map_sq"], r["dist_x_eta"], r["F"], r["inner_h_gap"], None]
        for r in res.records
    ]
    csv_path = out_dir / f"metrics-{tag}.csv"
    _write_csv(csv_path, TWO_LOOP_HEADER, rows)
    manifest = {
        "method": "two-loop",
        "lambda": cfg.lam,
        "gamma": res.gamma,
        "clamped": res.clamped,
        "T": cfg.T,
        "t_star": res.t_star,
        "total_inner_rounds": res.total_inner_rounds,
        "mean_grad_map_sq": res.mean_grad_map_sq,
        "seed": int(config.get("seed", 0)),
        "version": _version(),
        "csv": csv_path.name,
    }
    manifest["config_hash"] = _config_hash(
        {"lambda": cfg.lam, "gamma": res.gamma, "T": cfg.T}
    )
    with open(out_dir / f"manifest-{tag}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return manifest


def _eta_tag(value) -> str:
    if value == "rule":
        return "rule"
    return f"{float(value):g}".replace(".", "p").replace("-", "m")


def run(config_path) -> int:
    """Execute the experiment(s) described by the config. Returns exit code."""
    try:
        config = load_config(config_path)
        method = _section(config, "method")
        name = method.get("name", "fedavg")
        if name not in METHODS:
            raise ConfigError("method.name", f"must be one of {METHODS}")
        instance = build_problem(_section(config, "problem"))
        out_dir = Path(_section(config, "output", required=False).get("dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        sweep = config.get("sweep") or {}
        etas = sweep.get("eta")
        if etas is not None and name == "two-loop":
            raise ConfigError("sweep.eta", "eta sweep does not apply to two-loop")
        if name == "two-loop":
            _run_two_loop(config, instance, out_dir, "run")
        elif etas is None:
            if name == "agm":
                _run_agm(config, instance, out_dir, "run")
            else:
                _run_federated(config, instance, out_dir, "run")
        else:
            for value in etas:
                tag = f"eta-{_eta_tag(value)}"
                if name == "agm":
                    _run_agm(config, instance, out_dir, tag, eta_override=value)
                else:
                    _run_federated(config, instance, out_dir, tag, eta_override=value)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    return 0


def validate(config_path) -> int:
    """Dry-run schedule resolution and print the resolved parameters."""
    try:
        config = load_config(config_path)
        method = _section(config, "method")
        name = method.get("name", "fedavg")
        if name not in METHODS:
            raise ConfigError("method.name", f"must be one of {METHODS}")
        instance = build_problem(_section(config, "problem"))
        if name in ("fedavg", "scaffold"):
            schedule = resolve_schedule(config, instance)
            print(f"rule={schedule.rule} eta={schedule.eta:.6g} "
                  f"gamma_local={schedule.gamma_local:.6g} "
                  f"gamma_global={schedule.gamma_global:.6g} theta={schedule.theta:.9g}")
            if schedule.cap_exceeded:
                state = "clamped" if schedule.clamped else "not clamped"
                print(f"warning: gamma_local exceeds theoretical cap ({state}); "
                      f"caps={schedule.caps}")
            sharp = instance.sharpness
            gt = instance.ground_truth
            if sharp is not None and sharp.kappa == 1 and gt is not None and gt.x_star is not None:
                outer_kind = "shifted-norm" if "center" in instance.meta else "min-norm"
                _, _, _, grad_norm = bilevel_reference(instance, outer_kind)
                threshold = float("inf") if grad_norm == 0 else sharp.alpha / (2 * grad_norm)
                if schedule.eta <= threshold:
                    print(f"Case iii applicable: eta <= {threshold:.6g}")
                else:
                    print(f"warning: Case iii inapplicable (eta > {threshold:.6g})")
        else:
            print(f"method={name}: no federated schedule to resolve")
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedbilevel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute the experiment described by a JSON config")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="dry-run schedule resolution for a config")
    p_val.add_argument("config")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    return validate(args.config)


if __name__ == "__main__":
    sys.exit(main())
