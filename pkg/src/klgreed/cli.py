"""Command-line experiment driver.

Each subcommand reads an optional JSON config, merges it over built-in defaults,
validates the result and writes CSV files plus ``manifest.json`` to ``--out``.

Exit codes: 0 success, 1 a theory check failed, 2 bad usage or config,
3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema

from . import __version__
from .errors import ConfigError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

KL_NAMES = ["rkl", "fkl", "soft_rkl", "soft_fkl", "hard_rkl", "hard_fkl"]
_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_taus = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}
_kls = {"type": "array", "items": {"enum": KL_NAMES}, "minItems": 1}
_common = {
    "experiment": {"type": "string"},
    "output_dir": {"type": "string"},
    "seeds": _pos_int,
}
# soft variants need strictly positive temperatures
_soft_needs_positive_tau = {
    "if": {"properties": {"kls": {"contains": {"enum": ["soft_rkl", "soft_fkl"]}}}, "required": ["kls"]},
    "then": {"properties": {"taus": {"items": {"exclusiveMinimum": 0}}}},
}


def _schema(props: dict) -> dict:
    return {
        "type": "object",
        "properties": {**_common, **props},
        "additionalProperties": False,
        "allOf": [_soft_needs_positive_tau],
    }


SCHEMAS = {
    "bandit-surface": _schema(
        {
            "kls": _kls,
            "taus": _taus,
            "n_mu": {"type": "integer", "minimum": 3},
            "n_sigma": {"type": "integer", "minimum": 1},
            "mu_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
            "sigma_range": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
            "n_nodes": {"type": "integer", "minimum": 3},
        }
    ),
    "switch-stay": _schema(
        {
            "kls": _kls,
            "taus": _taus,
            "iterates": _pos_int,
            "steps": {"type": "integer", "minimum": 0},
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "optimizer": {"enum": ["sgd", "rmsprop", "adam"]},
            "estimator": {"enum": ["quadrature", "sampled"]},
            "n_samples": {"type": "array", "items": _pos_int, "minItems": 1},
            "mean_range": {"type": "number", "exclusiveMinimum": 0},
            "sigma_hat_init": _num,
            "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "n_nodes": {"type": "integer", "minimum": 3},
        }
    ),
    "theory": _schema(
        {
            "taus": _taus,
            "n_pairs": _pos_int,
            "n_bound": _pos_int,
            "n_random_mdps": _pos_int,
            "n_implication": _pos_int,
            "counterexample_taus": _taus,
            "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "base_seed": {"type": "integer", "minimum": 0},
        }
    ),
    "maze": _schema(
        {
            "maze": {"enum": ["maze5", "maze10"]},
            "kls": _kls,
            "taus": _taus,
            "estimated": {"type": "boolean"},
            "true_values": {"type": "boolean"},
            "iterations": _pos_int,
            "lr_actor": {"type": "number", "exclusiveMinimum": 0},
            "lr_critic": {"type": "number", "exclusiveMinimum": 0},
            "batch_size": _pos_int,
            "buffer_size": _pos_int,
            "timeout": _pos_int,
            "n_checkpoints": _pos_int,
            "rollouts": _pos_int,
            "rollout_max_steps": _pos_int,
            "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "optimizer": {"enum": ["sgd", "rmsprop", "adam"]},
            "true_value_lr": {"type": "number", "exclusiveMinimum": 0},
            "true_value_iters": _pos_int,
        }
    ),
}

DEFAULTS = {
    "bandit-surface": {
        "kls": ["rkl", "fkl"],
        "taus": [0.0, 0.01, 0.1, 0.4, 1.0],
        "n_mu": 101,
        "n_sigma": 101,
        "mu_range": [-2.0, 2.0],
        "sigma_range": [0.02, 2.0],
        "n_nodes": 1024,
        "seeds": 1,
    },
    "switch-stay": {
        "kls": ["rkl", "fkl"],
        "taus": [0.0, 0.01, 0.1, 0.4, 1.0],
        "iterates": 1000,
        "steps": 500,
        "lr": 0.01,
        "optimizer": "rmsprop",
        "estimator": "quadrature",
        "n_samples": [10, 500],
        "mean_range": 0.95,
        "sigma_hat_init": 0.0,
        "gamma": 0.9,
        "n_nodes": 1024,
        "seeds": 1,
    },
    "theory": {
        "taus": [float(f"{t:.12g}") for t in (10 ** (i / 3 - 2) for i in range(13))],
        "n_pairs": 100,
        "n_bound": 1000,
        "n_random_mdps": 20,
        "n_implication": 10_000,
        "counterexample_taus": [0.0, 0.1, 1.0],
        "gamma": 0.9,
        "base_seed": 0,
        "seeds": 30,
    },
    "maze": {
        "maze": "maze10",
        "kls": ["rkl", "fkl"],
        "taus": [0.0, 0.01, 0.1],
        "estimated": True,
        "true_values": True,
        "iterations": 20_000,
        "lr_actor": 0.001,
        "lr_critic": 0.001,
        "batch_size": 32,
        "buffer_size": 10_000,
        "timeout": 10_000,
        "n_checkpoints": 10,
        "rollouts": 100,
        "rollout_max_steps": 1_000,
        "gamma": 0.99,
        "optimizer": "rmsprop",
        "true_value_lr": 0.1,
        "true_value_iters": 100,
        "seeds": 30,
    },
}


# ------------------------------------------------------------------ config


def load_config(command: str, path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then ``overrides``; validated as a whole."""
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg.update(user)
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    validate_config(command, cfg)
    return cfg


def validate_config(command: str, cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    if cfg.get("experiment") not in (None, command):
        raise ConfigError(f"config is for {cfg['experiment']!r}, not {command!r}")


def config_hash(cfg: dict) -> str:
    canonical = json.dumps({k: v for k, v in cfg.items() if k != "output_dir"}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ------------------------------------------------------------------ output


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})


def _cell(v):
    """Shortest round-trip text for floats; numpy scalars become Python scalars first."""
    if hasattr(v, "item") and not isinstance(v, (str, bytes)):
        v = v.item()
    return repr(v) if isinstance(v, float) else v


def write_manifest(out: Path, command: str, cfg: dict, files: list[str], extra: dict | None = None) -> None:
    manifest = {
        "subcommand": command,
        "version": __version__,
        "config_sha256": config_hash(cfg),
        "config": cfg,
        "files": sorted(files),
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _pmap(fn, tasks: list, parallel: int) -> list:
    if parallel <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, tasks))


# ------------------------------------------------------------------ tasks (top level for pickling)


def _bandit_task(args):
    from .experiments import bandit_surface
    from .target import Integrator

    kl, tau, cfg = args
    return bandit_surface(
        [kl], [tau], cfg["n_mu"], cfg["n_sigma"], tuple(cfg["mu_range"]), tuple(cfg["sigma_range"]), Integrator(n=cfg["n_nodes"])
    )


def _switch_stay_task(args):
    from .experiments import SwitchStayConfig, switch_stay_run

    kl, tau, seed, mode, n_samples, cfg = args
    sc = SwitchStayConfig(
        kl=kl,
        tau=tau,
        iterates=cfg["iterates"],
        steps=cfg["steps"],
        lr=cfg["lr"],
        seed=seed,
        mode=mode,
        n_samples=n_samples,
        mean_range=cfg["mean_range"],
        sigma_hat_init=cfg["sigma_hat_init"],
        gamma=cfg["gamma"],
        optimizer=cfg["optimizer"],
        n_nodes=cfg["n_nodes"],
    )
    return switch_stay_run(sc)


def _maze_task(args):
    from .agent import TrainConfig
    from .experiments import maze_estimated_run, maze_true_value_run

    mode, kl, tau, seed, cfg = args
    if mode == "true":
        res = maze_true_value_run(
            cfg["maze"], kl, tau, seed, cfg["true_value_lr"], cfg["true_value_iters"], cfg["n_checkpoints"],
            cfg["rollouts"], cfg["rollout_max_steps"], cfg["gamma"],
        )
    else:
        tc = TrainConfig(
            env=cfg["maze"], kl=kl, tau=tau, lr_actor=cfg["lr_actor"], lr_critic=cfg["lr_critic"],
            batch_size=cfg["batch_size"], buffer_size=cfg["buffer_size"], iterations=cfg["iterations"], seed=seed,
            optimizer=cfg["optimizer"], gamma=cfg["gamma"], timeout=cfg["timeout"], n_checkpoints=cfg["n_checkpoints"],
            rollouts=cfg["rollouts"], rollout_max_steps=cfg["rollout_max_steps"],
        )
        res = maze_estimated_run(tc)
    res.pop("policy", None)
    return res


# ------------------------------------------------------------------ commands


def cmd_bandit_surface(cfg: dict, out: Path, parallel: int = 1) -> int:
    tasks = [(kl, float(tau), cfg) for kl in cfg["kls"] for tau in cfg["taus"]]
    rows = [r for chunk in _pmap(_bandit_task, tasks, parallel) for r in chunk]
    rows.sort(key=lambda r: (r["kl"], r["tau"], r["sigma"], r["mu_hat"]))
    write_csv(out / "bandit_surface.csv", rows, ["kl", "tau", "mu_hat", "sigma_hat", "sigma", "loss"])
    write_manifest(out, "bandit-surface", cfg, ["bandit_surface.csv"], {"grid_resolution": [cfg["n_sigma"], cfg["n_mu"]]})
    return EXIT_OK


def cmd_switch_stay(cfg: dict, out: Path, parallel: int = 1) -> int:
    from .experiments import summarize_switch_stay

    modes = [("quadrature", 0)] if cfg["estimator"] == "quadrature" else [("sampled", n) for n in cfg["n_samples"]]
    tasks = [
        (kl, float(tau), seed, mode, ns, cfg)
        for mode, ns in modes
        for kl in cfg["kls"]
        for tau in cfg["taus"]
        for seed in range(cfg["seeds"])
    ]
    rows = [r for chunk in _pmap(_switch_stay_task, tasks, parallel) for r in chunk]
    rows.sort(key=lambda r: (r["mode"], r["n_samples"], r["kl"], r["tau"], r["seed"], r["iterate"]))
    cols = ["kl", "tau", "mode", "n_samples", "seed", "iterate", "v_s0", "v_s1", "mu_hat_s0", "sigma_s0", "mu_hat_s1", "sigma_s1", "distance_to_optimum"]
    write_csv(out / "switch_stay.csv", rows, cols)
    summary = summarize_switch_stay(rows)
    write_csv(out / "switch_stay_summary.csv", summary, list(summary[0]) if summary else [])
    write_manifest(out, "switch-stay", cfg, ["switch_stay.csv", "switch_stay_summary.csv"])
    return EXIT_OK


def cmd_theory(cfg: dict, out: Path, parallel: int = 1) -> int:
    from .experiments import theory_run
    from .theory import summarize_gaps

    res = theory_run(
        n_pairs=cfg["n_pairs"],
        n_bound=cfg["n_bound"],
        n_random_mdps=cfg["n_random_mdps"],
        n_implication=cfg["n_implication"],
        gap_seeds=cfg["seeds"],
        tau_grid=cfg["taus"],
        counterexample_taus=cfg["counterexample_taus"],
        gamma=cfg["gamma"],
        seed=cfg["base_seed"],
    )
    report = [dict(check=r.name, passed=r.passed, checked=r.checked, detail=r.detail) for r in res["suite"]]
    imp = res["implication"]
    report.append(
        dict(check="sufficient FKL reduction implies RKL improvement", passed=imp["violations"] == 0, checked=imp["samples"], detail=f"premise met {imp['premise_hits']} times")
    )
    write_csv(out / "theory_report.csv", report, ["check", "passed", "checked", "detail"])
    certs = res["counterexamples"]
    write_csv(out / "counterexamples.csv", certs, list(certs[0]))
    gaps = [dict(r, **{"lambda": r["lambda_"]}) for r in res["gaps"]]
    write_csv(out / "relative_gap.csv", gaps, ["lambda", "tau", "seed", "bound", "max_reduction", "relative_gap"])
    summary = [dict(r, **{"lambda": r["lambda_"]}) for r in summarize_gaps(res["gaps"])]
    write_csv(out / "relative_gap_summary.csv", summary, ["lambda", "tau", "median", "q25", "q75"])
    files = ["theory_report.csv", "counterexamples.csv", "relative_gap.csv", "relative_gap_summary.csv"]
    write_manifest(out, "theory", cfg, files)
    ok = all(r["passed"] for r in report) and all(c["certified"] for c in certs)
    for r in report:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']} ({r['checked']}) {r['detail']}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_maze(cfg: dict, out: Path, parallel: int = 1) -> int:
    from .agent import maze_layout
    from .experiments import mean_visitation, visitation_rows, visitation_tv

    maze = maze_layout(cfg["maze"], cfg["gamma"])
    modes = [m for m, on in (("estimated", cfg["estimated"]), ("true", cfg["true_values"])) if on]
    keys = [(mode, kl, float(tau), seed) for mode in modes for kl in cfg["kls"] for tau in cfg["taus"] for seed in range(cfg["seeds"])]
    results = dict(zip(keys, _pmap(_maze_task, [(*k, cfg) for k in keys], parallel)))

    curve_cols = ["env", "kl", "tau", "lr_actor", "lr_critic", "seed", "step", "eta_tau", "eta"]
    vis_cols = ["kl", "tau", "seed", "checkpoint", "step", "x", "y", "normalized_count"]
    files = []
    for mode in modes:
        mk = sorted(k for k in keys if k[0] == mode)
        curve = [row for k in mk for row in results[k]["curve"]]
        write_csv(out / f"curve_{mode}.csv", curve, curve_cols)
        vis, mean_vis, finals, means = [], [], [], {}
        for k in mk:
            r = results[k]
            for c, dist in sorted(r["visitation"].items()):
                vis += visitation_rows(maze, dist, kl=k[1], tau=k[2], seed=k[3], checkpoint=c, step=r["steps"][c])
            finals.append(dict(kl=k[1], tau=k[2], seed=k[3], reached_goal=bool(r["reached_goal"]), error=r.get("error") or ""))
        for kl in cfg["kls"]:
            for tau in cfg["taus"]:
                runs = [results[(mode, kl, float(tau), s)] for s in range(cfg["seeds"])]
                means[(kl, float(tau))] = avg = mean_visitation(runs)
                steps = runs[0]["steps"]
                for c, dist in avg.items():
                    mean_vis += visitation_rows(maze, dist, kl=kl, tau=float(tau), seed="mean", checkpoint=c, step=steps[c])
        tv = []
        if "rkl" in cfg["kls"] and "fkl" in cfg["kls"]:
            for tau in cfg["taus"]:
                for c, d in visitation_tv(means[("rkl", float(tau))], means[("fkl", float(tau))]).items():
                    tv.append(dict(tau=float(tau), checkpoint=c, total_variation=d))
        write_csv(out / f"visitation_{mode}.csv", vis, vis_cols)
        write_csv(out / f"visitation_{mode}_mean.csv", mean_vis, vis_cols)
        write_csv(out / f"final_{mode}.csv", finals, ["kl", "tau", "seed", "reached_goal", "error"])
        write_csv(out / f"visitation_{mode}_tv.csv", tv, ["tau", "checkpoint", "total_variation"])
        files += [f"curve_{mode}.csv", f"visitation_{mode}.csv", f"visitation_{mode}_mean.csv", f"final_{mode}.csv", f"visitation_{mode}_tv.csv"]
    write_manifest(out, "maze", cfg, files, {"maze": {"width": maze.width, "height": maze.height}})
    return EXIT_OK


COMMANDS = {
    "bandit-surface": cmd_bandit_surface,
    "switch-stay": cmd_switch_stay,
    "theory": cmd_theory,
    "maze": cmd_maze,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="klgreed", description="Run KL greedification experiments and export CSV results.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", metavar="PATH", help="JSON config merged over the defaults")
        sp.add_argument("--out", metavar="DIR", help="output directory (default out/<command>)")
        sp.add_argument("--seeds", metavar="N", type=int, help="number of seeds")
        sp.add_argument("--parallel", metavar="K", type=int, default=1, help="worker processes")
        sp.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_defaults:
        print(json.dumps(DEFAULTS[args.command], indent=2))
        return EXIT_OK
    try:
        cfg = load_config(args.command, args.config, {"seeds": args.seeds})
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.parallel < 1:
        print("error: --parallel must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or cfg.get("output_dir") or f"out/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out, args.parallel)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
