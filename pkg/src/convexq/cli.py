"""Command-line experiment runner.

Every subcommand reads an optional INI file whose single section is named
after the subcommand.  Unknown sections or keys are rejected with their line
number.  Every artifact records the config hash and the seed; results depend
only on ``(config, seed)``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import batch_pd, cvxq, inventory, qlearn, variance
from .features import tabular_basis
from .mdp_core import BUNDLED_MDPS, RandomizedPolicy, bundled_mdp, greedy_policy, load_mdp, value_iteration
from .simulate import FiniteMdpEnv, rollout

__all__ = ["main", "ConfigError", "load_config", "SCHEMAS"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and its line."""


def _tuple_of_str(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


# subcommand -> key -> (parser, default)
SCHEMAS: dict[str, dict] = {
    "tabular-check": {"mdps": (_tuple_of_str, ",".join(BUNDLED_MDPS)), "tol": (float, 1e-6)},
    "cvxq-train": {
        "mdp": (str, "ring4"), "N": (_int, 10**5), "relative_delta": (float, 0.0),
        "method": (str, "epigraph"), "box_radius": (float, 0.0),
    },
    "batch-train": {
        "mdp": (str, "chain3"), "N": (_int, 10**5), "n_batches": (_int, 50), "a": (float, 200.0),
        "b": (float, 24.0), "n0": (float, 200.0), "kappa": (float, 1.0), "epsilon": (float, 0.012),
        "n_iterations": (_int, 40000), "mode": (str, "implicit"), "tail": (float, 0.5), "every": (_int, 100),
    },
    "qlearn-train": {
        "mdp": (str, "chain3"), "N": (_int, 2 * 10**5), "step_size": (float, 50.0),
        "step_exponent": (float, 0.85), "step_offset": (float, 2000.0), "relative_delta": (float, 0.0),
        "every": (_int, 1000),
    },
    "inventory-sweep": {
        "noise": (str, "gaussian"), "grid_min": (float, 0.0), "grid_max": (float, 10.0),
        "grid_points": (_int, 100), "horizon": (_int, 10**4), "replicates": (_int, 2000),
        "tolerance": (float, 1.0),
    },
    "inventory-compare": {
        "noise": (str, "gaussian"), "M": (_int, 50), "N": (_int, 10**4),
        "algorithms": (_tuple_of_str, ",".join(inventory.ALGORITHMS)), "epsilon": (float, 0.9),
        "order_prob": (float, 0.05), "mu": (str, "grid"), "threshold_reading": (str, "literal"),
        "qlearn_step": (float, 1e-3), "bins": (_int, 20),
    },
    "clt-lab": {
        "N": (_int, 10**4), "M": (_int, 100), "noise_scale": (float, 1.0), "bins": (_int, 20),
        "tolerance": (float, 0.2),
    },
    "covariance-report": {"mdp": (str, "ring4")},
}


@dataclass
class LoadedConfig:
    command: str
    values: dict
    source: str | None

    def hash(self) -> str:
        canon = json.dumps({"command": self.command, **{k: _jsonable(v) for k, v in self.values.items()}},
                           sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _line_of(text: str, section: str | None, key: str) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section if section is not None else True:
            if line.split("=", 1)[0].split(":", 1)[0].strip() == key:
                return i
    return None


def load_config(command: str, path: str | None) -> LoadedConfig:
    """Parse and validate the INI section for ``command``; defaults fill missing keys."""
    schema = SCHEMAS[command]
    values = {k: (p(d) if isinstance(d, str) and p is not str else d) for k, (p, d) in schema.items()}
    if path is None:
        return LoadedConfig(command, values, None)
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, default_section="\0none")
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in cp.sections():
        if section != command:
            raise ConfigError(f"{path}:{_line_of_section(text, section)}: unknown section [{section}] "
                              f"(expected [{command}])")
    if cp.has_section(command):
        for key, raw in cp.items(command):
            if key not in schema:
                raise ConfigError(f"{path}:{_line_of(text, command, key)}: unknown key {key!r} in [{command}]; "
                                  f"allowed: {', '.join(sorted(schema))}")
            parser = schema[key][0]
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{_line_of(text, command, key)}: bad value for {key!r}: {exc}") from exc
    return LoadedConfig(command, values, str(path))


def _line_of_section(text: str, section: str) -> int | None:
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{section}]":
            return i
    return None


# ---------------------------------------------------------------------------
# output helpers


class Output:
    def __init__(self, out_dir: str, cfg: LoadedConfig, seed: int):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.stamp = {"config_hash": cfg.hash(), "seed": seed, "command": cfg.command}
        self.files: list[str] = []

    def csv(self, name: str, header, rows) -> Path:
        path = self.dir / name
        with path.open("w", newline="") as fh:
            fh.write(f"# config_hash={self.stamp['config_hash']} seed={self.stamp['seed']}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow(r)
        self.files.append(str(path))
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        path.write_text(json.dumps({**self.stamp, **payload}, indent=2, sort_keys=True, default=_default) + "\n")
        self.files.append(str(path))
        return path


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _fmt(x) -> str:
    return repr(float(x))


def _mdp(name: str):
    return bundled_mdp(name) if name in BUNDLED_MDPS else load_mdp(name)


def _uniform_setup(mdp):
    features = tabular_basis(mdp)
    policy = RandomizedPolicy.uniform(mdp.n_states, mdp.n_actions)
    mu = cvxq.pmf_feature_mean(features, np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_pairs))
    return features, policy, mu


# ---------------------------------------------------------------------------
# subcommands; each returns a list of failed checks


def cmd_tabular_check(cfg: LoadedConfig, seed: int, out: Output, workers: int) -> list[str]:
    failed, rows, report = [], [], {}
    for name in cfg.values["mdps"]:
        mdp = _mdp(name)
        features, policy, mu = _uniform_setup(mdp)
        cs = cvxq.ConstraintSystem.exact(mdp, policy, features, mu)
        rep = cvxq.solve_cvxq(cs)
        Q = value_iteration(mdp, tol=1e-12)
        if not rep.optimal:
            failed.append(f"{name}: LP status {rep.status.value}")
            report[name] = {"status": rep.status.value}
            continue
        theta = rep.theta.reshape(mdp.n_states, mdp.n_actions)
        err = float(np.abs(theta - Q).max())
        report[name] = {"status": rep.status.value, "max_abs_error": err,
                        "greedy_match": bool(np.array_equal(greedy_policy(theta).action, greedy_policy(Q).action))}
        if err > cfg.values["tol"]:
            failed.append(f"{name}: |theta - Q*|_inf = {err:.3g} > {cfg.values['tol']:g}")
        for x in range(mdp.n_states):
            for u in range(mdp.n_actions):
                rows.append([name, x, u, _fmt(theta[x, u]), _fmt(Q[x, u])])
    out.csv("tabular_check.csv", ["mdp", "x", "u", "theta", "q_star"], rows)
    out.json("tabular_check.json", {"results": report})
    for name, r in report.items():
        print(f"{name}: {r}")
    return failed


def cmd_cvxq_train(cfg, seed, out, workers):
    v = cfg.values
    mdp = _mdp(v["mdp"])
    features, policy, mu = _uniform_setup(mdp)
    traj = rollout(FiniteMdpEnv(mdp), policy, v["N"], seed=seed)
    cs = cvxq.ConstraintSystem.from_trajectory(traj, features, mdp.discount, mu).aggregate()
    if v["relative_delta"] > 0:
        cs = cs.relative(v["relative_delta"], mu)
    radius = v["box_radius"] if v["box_radius"] > 0 else None
    if v["method"] == "epigraph":
        rep = cvxq.solve_cvxq(cs, radius)
    elif v["method"] == "constraint_generation":
        rep = cvxq.solve_cvxq_constraint_gen(cs, radius)
    else:
        raise ConfigError(f"unknown method {v['method']!r}")
    payload = {"report": cvxq.report_dict(rep)}
    failed = []
    if rep.optimal:
        Q = value_iteration(mdp, tol=1e-12)
        gr = cvxq.galerkin_report(cs, rep)
        payload["galerkin"] = {"n_tight": gr.n_tight, "is_bfs": gr.is_bfs, "greedy_unique": gr.greedy_unique}
        if v["relative_delta"] == 0:
            payload["max_abs_error_vs_q_star"] = float(np.abs(rep.theta - Q.ravel()).max())
        out.csv("theta.csv", ["index", "theta"], [[i, _fmt(t)] for i, t in enumerate(rep.theta)])
        if gr.inside_box and gr.n_tight < cs.d:
            failed.append(f"only {gr.n_tight} tight constraints, expected >= {cs.d}")
    else:
        failed.append(f"LP status {rep.status.value}")
    out.json("cvxq_train.json", payload)
    print(json.dumps(payload.get("galerkin", {})), payload.get("max_abs_error_vs_q_star"))
    return failed


def cmd_batch_train(cfg, seed, out, workers):
    v = cfg.values
    mdp = _mdp(v["mdp"])
    features, policy, mu = _uniform_setup(mdp)
    traj = rollout(FiniteMdpEnv(mdp), policy, v["N"], seed=seed)
    sched = batch_pd.BatchSchedule.equal(v["N"], v["n_batches"], a=v["a"], b=v["b"], n0=v["n0"])
    batches = batch_pd.split_batches(traj, features, mdp.discount, mu, sched)
    trace = batch_pd.run_batch_pd(batches, sched, batch_pd.Regularizer(v["kappa"], v["epsilon"]), v["mode"],
                                  n_iterations=v["n_iterations"])
    avg = trace.averaged_theta(v["tail"])
    Q = value_iteration(mdp, tol=1e-12)
    greedy = greedy_policy(avg.reshape(mdp.n_states, mdp.n_actions)).action
    opt = greedy_policy(Q).action
    rows = [[n] + [_fmt(t) for t in trace.theta[n]] for n in range(0, trace.theta.shape[0], v["every"])]
    out.csv("batch_trace.csv", ["n"] + [f"theta_{j}" for j in range(features.d)], rows)
    payload = {"final_theta": trace.final_theta, "averaged_theta": avg, "final_lambda": trace.final_lam,
               "residuals": trace.residuals, "greedy": greedy, "optimal_greedy": opt}
    out.json("batch_train.json", payload)
    print(f"averaged theta {np.round(avg, 4)}; greedy {greedy.tolist()} vs optimal {opt.tolist()}")
    return [] if np.array_equal(greedy, opt) else ["greedy policy of the averaged iterate is not optimal"]


def cmd_qlearn_train(cfg, seed, out, workers):
    v = cfg.values
    mdp = _mdp(v["mdp"])
    features, policy, mu = _uniform_setup(mdp)
    traj = rollout(FiniteMdpEnv(mdp), policy, v["N"], seed=seed)
    qc = qlearn.QLearnConfig(v["step_size"], v["step_exponent"], v["step_offset"])
    if v["relative_delta"] > 0:
        trace = qlearn.relative_q_learning_run(traj, features, mdp.discount, v["relative_delta"], mu, qc)
    else:
        trace = qlearn.q_learning_run(traj, features, mdp.discount, qc)
    theta = trace.final_theta
    mean, se = qlearn.galerkin_residual(traj, features, mdp.discount, theta)
    rows = [[k] + [_fmt(t) for t in trace.theta[k]] for k in range(0, trace.theta.shape[0], v["every"])]
    out.csv("qlearn_trace.csv", ["k"] + [f"theta_{j}" for j in range(features.d)], rows)
    payload = {"final_theta": theta, "galerkin_residual": mean, "galerkin_residual_se": se}
    if v["relative_delta"] == 0:
        payload["max_abs_error_vs_q_star"] = float(np.abs(theta - value_iteration(mdp, tol=1e-12).ravel()).max())
    out.json("qlearn_train.json", payload)
    print(f"final theta {np.round(theta, 4)}; residual {np.abs(mean).max():.3g}")
    return [] if np.all(np.isfinite(theta)) else ["non-finite parameters"]


def cmd_inventory_sweep(cfg, seed, out, workers):
    v = cfg.values
    env = inventory.InventoryEnv(noise=v["noise"])
    _, r_dag = inventory.rho_rbar(env.beta, env.noise_variance, env.discount, env.c_plus, env.c_minus)
    grid = np.linspace(v["grid_min"], v["grid_max"], v["grid_points"])
    res = inventory.mc_threshold_sweep(env, grid, v["horizon"], v["replicates"], seed)
    out.csv("sweep.csv", ["rbar", "discounted_cost", "stderr"], [[_fmt(a), _fmt(b), _fmt(c)] for a, b, c in res.rows()])
    payload = {"rbar_dagger": r_dag, "rbar_star": res.argmin, "noise": v["noise"]}
    out.json("sweep.json", payload)
    print(f"rbar_dagger={r_dag:.4f} rbar_star={res.argmin:.4f}")
    gap = abs(res.argmin - r_dag)
    return [] if gap <= v["tolerance"] else [f"|rbar* - rbar_dagger| = {gap:.3g} > {v['tolerance']:g}"]


def cmd_inventory_compare(cfg, seed, out, workers):
    v = cfg.values
    env = inventory.InventoryEnv(noise=v["noise"])
    cc = inventory.ComparisonConfig(M=v["M"], N=v["N"], seed=seed, algorithms=v["algorithms"],
                                    epsilon=v["epsilon"], order_prob=v["order_prob"], mu=v["mu"],
                                    threshold_reading=v["threshold_reading"], qlearn_step=v["qlearn_step"],
                                    workers=workers)
    res = inventory.run_comparison(env, cc)
    out.csv("runs.csv", ["run", "algorithm", "crossing_level", "rbar_order_below"]
            + [f"theta_{j}" for j in range(8)], res.per_run_rows())
    for alg in res.algorithms:
        e = res.relative_errors(alg)
        if e.size:
            out.csv(f"hist_relerr_{alg}.csv", ["component", "left", "right", "count"],
                    [[r[0], _fmt(r[1]), _fmt(r[2]), r[3]] for r in variance.histogram_rows(e, v["bins"])])
        s = res.scaled_parameter_errors(alg)
        if s.shape[0]:
            out.csv(f"hist_scaled_theta_{alg}.csv", ["component", "left", "right", "count"],
                    [[r[0], _fmt(r[1]), _fmt(r[2]), r[3]] for r in variance.histogram_rows(s, v["bins"])])
    summary = res.summary()
    out.json("summary.json", summary)
    for alg, s in summary["algorithms"].items():
        print(f"{alg}: ok={s['n_ok']} variance={s['variance']}")
    return []


def cmd_clt_lab(cfg, seed, out, workers):
    v = cfg.values
    lab = variance.RandomConstraintLab.sample(seed=seed, N=v["N"], M=v["M"], noise_scale=v["noise_scale"])
    res = variance.clt_lab_run(lab)
    rows = []
    for m in range(res.theta_N.shape[0]):
        rows.append([m] + [_fmt(t) for t in res.theta_N[m]] + [_fmt(t) for t in res.theta_N_star[m]]
                    + [_fmt(t) for t in res.theta_N_star_sampled[m]])
    out.csv("samples.csv", ["run", "theta_N_0", "theta_N_1", "theta_shift_0", "theta_shift_1",
                            "theta_shift_sampled_0", "theta_shift_sampled_1"], rows)
    for which in ("theta_N", "theta_N_star", "theta_N_star_sampled"):
        out.csv(f"hist_{which}.csv", ["component", "left", "right", "count"],
                [[r[0], _fmt(r[1]), _fmt(r[2]), r[3]]
                 for r in variance.histogram_rows(res.scaled_errors(which), v["bins"])])
    summary = res.summary()
    summary["instance"] = {"a": lab.a, "b": lab.b, "v": lab.v}
    out.json("summary.json", summary)
    failed = []
    if set(res.tight_star.tolist()) != set(res.positive_duals_star.tolist()):
        failed.append("tight set differs from positive-dual set")
    gap = summary.get("gap_theta_N", np.inf)
    print(f"tight={res.tight_star.tolist()} positive duals={res.positive_duals_star.tolist()} "
          f"covariance gap={gap:.3f}")
    if not gap <= v["tolerance"]:
        failed.append(f"covariance gap {gap:.3f} > {v['tolerance']:g}")
    return failed


def cmd_covariance_report(cfg, seed, out, workers):
    mdp = _mdp(cfg.values["mdp"])
    features, policy, mu = _uniform_setup(mdp)
    try:
        rep = variance.covariance_report(mdp, policy, features, mu)
    except variance.SingularAbar as exc:
        out.json("covariance_report.json", {"error": str(exc)})
        return [str(exc)]
    out.json("covariance_report.json", rep.as_dict())
    print(f"condition number {rep.condition_number:.3g}; trace Sigma_theta {np.trace(rep.Sigma_theta):.4g}")
    return []


COMMANDS = {
    "tabular-check": cmd_tabular_check,
    "cvxq-train": cmd_cvxq_train,
    "batch-train": cmd_batch_train,
    "qlearn-train": cmd_qlearn_train,
    "inventory-sweep": cmd_inventory_sweep,
    "inventory-compare": cmd_inventory_compare,
    "clt-lab": cmd_clt_lab,
    "covariance-report": cmd_covariance_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convexq", description="Convex Q-learning experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help=f"INI file with a [{name}] section")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=f"results/{name}")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--check", action="store_true", help="exit nonzero when an oracle check fails")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config)
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        out = Output(args.out, cfg, args.seed)
        failed = COMMANDS[args.command](cfg, args.seed, out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for msg in failed:
        print(f"CHECK FAILED: {msg}", file=sys.stderr)
    return 1 if (failed and args.check) else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
