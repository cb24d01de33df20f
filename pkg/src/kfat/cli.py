"""Command-line front end.

    kfat scan      Monte Carlo cost surfaces per Δt plus their max
    kfat oracle    closed-form NEES surfaces, NEES lines and Δt sweeps
    kfat tune      repeated tuning trials (gpbo, tpbo or nelder-mead)
    kfat validate  consistency report for a given tuning
    kfat rerun     repeat a previous command from its manifest.json

Every command writes ``manifest.json`` next to its CSV/JSON outputs.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .metrics import CostKind, chi_square_band, j_cost, two_sigma_coverage_by_component
from .oracle import expected_nees, log_grid, oracle_grid
from .simulate import monte_carlo
from .surrogate import Family
from .tuner import bayesopt_tune, derive_seed, lhs_starts, nelder_mead_tune

__all__ = ["main", "parse_grid", "parse_floats"]

METHODS = ("gpbo", "tpbo", "nelder-mead")


class UsageError(ValueError):
    pass


def _tool_version() -> str:
    try:
        return version("kfat")
    except PackageNotFoundError:
        return "unknown"


def parse_floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise UsageError("empty number list")
    return vals


def _parse_axis(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"axis must be lo:hi:n, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise UsageError(f"bad axis {text!r}") from exc
    if not (0 < lo < hi) or n < 1:
        raise UsageError(f"axis needs 0 < lo < hi and n >= 1, got {text!r}")
    return lo, hi, n


def parse_grid(text: str):
    """``"Vlo:Vhi:n,Wlo:Whi:n"`` -> log-spaced (V_axis, W_axis)."""
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"grid must be 'Vlo:Vhi:n,Wlo:Whi:n', got {text!r}")
    (vl, vh, vn), (wl, wh, wn) = (_parse_axis(p) for p in parts)
    return log_grid(vl, vh, vn), log_grid(wl, wh, wn)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("KFAT_THREADS", "1")))
    except ValueError:
        return 1


def _resolve(args) -> ExperimentConfig:
    exp = load_config(args.config)
    sc = exp.scenario
    model = exp.model
    if getattr(args, "sensor", None):
        model = model.with_sensor(args.sensor)
    changes = {"model": model}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.steps is not None:
        changes["steps"] = args.steps
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    sc = replace(sc, **changes)
    tchanges = {"scenario": sc}
    if args.dt_list is not None:
        tchanges["dt_list"] = tuple(parse_floats(args.dt_list))
    if args.metric is not None:
        tchanges["metric"] = CostKind(args.metric)
    if args.seed is not None:
        tchanges["seed"] = args.seed
    tuner = replace(exp.tuner, **tchanges)
    return ExperimentConfig(model=model, scenario=sc, tuner=tuner, raw=exp.raw)


def _q_vector(exp: ExperimentConfig, text: str) -> np.ndarray:
    q = np.array(parse_floats(text))
    n = exp.model.nw + exp.model.nz
    if q.size != n:
        raise UsageError(f"--q needs {n} values (V..., W...), got {q.size}")
    return q


# ---------------------------------------------------------------- commands


def cmd_scan(args, exp: ExperimentConfig, out: Path) -> None:
    V_axis, W_axis = parse_grid(args.grid)
    cfg = exp.tuner
    sc = exp.scenario
    model = exp.model
    per_dt = {}
    for dt in cfg.dt_list:
        rows = []
        for v in V_axis:
            for w in W_axis:
                q = np.r_[np.full(model.nw, v), np.full(model.nz, w)]
                res = monte_carlo(sc.with_candidate(cfg.noise(q), dt=dt))
                stat, dof = (res.nees, model.nx) if cfg.metric is CostKind.JNEES else (res.nis, model.nz)
                c = j_cost(stat, dof, cfg.metric, dt)
                rows.append((v, w, dt, c.value, c.mean_statistic))
        per_dt[dt] = rows
        _write_csv(out / f"scan_dt{dt:g}.csv", ["V", "W", "dt", "cost", "mean_statistic"], rows)
    combined = []
    for i, (v, w, *_rest) in enumerate(per_dt[cfg.dt_list[0]]):
        combined.append((v, w, max(per_dt[dt][i][3] for dt in cfg.dt_list)))
    _write_csv(out / "scan_combined.csv", ["V", "W", "cost"], combined)


def cmd_oracle(args, exp: ExperimentConfig, out: Path) -> None:
    V_axis, W_axis = parse_grid(args.grid)
    truth = exp.scenario.true_noise
    band = tuple(parse_floats(args.band))
    if len(band) != 2 or band[0] >= band[1]:
        raise UsageError("--band needs lo,hi with lo < hi")
    header = ["V", "W", "dt", "expected_nees", "jnees", "logdet_P", "logdet_Sigma"]
    surfaces = []
    for dt in exp.tuner.dt_list:
        g = oracle_grid(V_axis, W_axis, truth.V, truth.W, dt, exp.model)
        surfaces.append(g.jnees)
        rows = list(g.rows())
        _write_csv(out / f"oracle_dt{dt:g}.csv", header, rows)
        _write_csv(out / f"nees_line_dt{dt:g}.csv", header, [r for r in rows if band[0] <= r[3] <= band[1]])
    jmax = np.max(surfaces, axis=0)
    _write_csv(out / "oracle_combined.csv", ["V", "W", "jnees_max"],
               [(v, w, jmax[i, j]) for i, v in enumerate(V_axis) for j, w in enumerate(W_axis)])
    if args.dt_sweep:
        if not args.q:
            raise UsageError("--dt-sweep needs --q")
        lo, hi, n = _parse_axis(args.dt_sweep)
        q = exp.tuner.noise(_q_vector(exp, args.q))
        rows = []
        for dt in np.linspace(lo, hi, n):
            r = expected_nees(q.V, q.W, truth.V, truth.W, dt, model=exp.model, P0=exp.scenario.P0)
            rows.append((q.V[0], q.W[0], dt, r.expected_nees, r.jnees, np.linalg.slogdet(r.P_filter)[1],
                         np.linalg.slogdet(r.Sigma_true)[1]))
        _write_csv(out / "dt_sweep.csv", header, rows)


def _run_trial(payload):
    cfg, method, i, x0 = payload
    if method == "nelder-mead":
        return nelder_mead_tune(cfg, x0)
    return bayesopt_tune(cfg)


def cmd_tune(args, exp: ExperimentConfig, out: Path) -> None:
    if args.method not in METHODS:
        raise UsageError(f"--method must be one of {METHODS}")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    base = exp.tuner
    if args.method == "tpbo":
        base = replace(base, surrogate_family=Family.TP)
    elif args.method == "gpbo":
        base = replace(base, surrogate_family=Family.GP)
    if args.n_seed is not None:
        base = replace(base, n_seed=args.n_seed)
    if args.n_iter is not None:
        base = replace(base, n_iter=args.n_iter)
    starts = lhs_starts(args.trials, base.dim, base.seed)
    payloads = [(replace(base, seed=derive_seed(base.seed, i)), args.method, i, starts[i])
                for i in range(args.trials)]
    workers = min(_threads(), args.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_trial, payloads))
    else:
        results = [_run_trial(p) for p in payloads]
    res_dir = out / "results"
    res_dir.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(results):
        d = r.to_dict()
        d["trial"] = i
        _write_json(res_dir / f"trial_{i:03d}.json", d)
        (res_dir / f"trial_{i:03d}_history.csv").write_text(r.history_csv())
    Q = np.array([r.q_star.as_vector() for r in results])
    names = [f"V{j}" for j in range(exp.model.nw)] + [f"W{j}" for j in range(exp.model.nz)]
    ddof = 1 if len(results) > 1 else 0
    rows = [(args.method, names[j], Q[:, j].mean(), Q[:, j].var(ddof=ddof)) for j in range(Q.shape[1])]
    _write_csv(out / "summary.csv", ["method", "param", "mean", "variance"], rows)


def validation_report(exp: ExperimentConfig, q, confidence: float = 0.95):
    """Monte Carlo consistency report for intensities ``q`` at the scenario Δt."""
    sc = exp.scenario
    model = exp.model
    res = monte_carlo(sc.with_candidate(exp.tuner.noise(q)))
    N, T = res.nees.shape
    nees_bar = res.nees.mean(axis=0)
    nis_bar = res.nis.mean(axis=0)
    nees_band = chi_square_band(model.nx, N, confidence)
    nis_band = chi_square_band(model.nz, N, confidence)
    cov = np.mean([two_sigma_coverage_by_component(res.errors[i], res.P_post) for i in range(N)], axis=0)
    report = {
        "q": [float(v) for v in q],
        "dt": sc.dt,
        "runs": N,
        "steps": T,
        "confidence": confidence,
        "nees": {
            "mean": float(nees_bar.mean()),
            "second_moment": float(np.mean(nees_bar ** 2)),
            "jcost": j_cost(res.nees, model.nx, CostKind.JNEES, sc.dt).value,
            "band": list(nees_band),
            "pass": bool(nees_band[0] <= nees_bar.mean() <= nees_band[1]),
        },
        "nis": {
            "mean": float(nis_bar.mean()),
            "second_moment": float(np.mean(nis_bar ** 2)),
            "jcost": j_cost(res.nis, model.nz, CostKind.JNIS, sc.dt).value,
            "band": list(nis_band),
            "pass": bool(nis_band[0] <= nis_bar.mean() <= nis_band[1]),
        },
        "two_sigma_coverage": {"per_component": cov.tolist(), "mean": float(cov.mean())},
    }
    return report, res


def cmd_validate(args, exp: ExperimentConfig, out: Path) -> None:
    if not args.q:
        raise UsageError("validate needs --q")
    q = _q_vector(exp, args.q)
    report, res = validation_report(exp, q, args.confidence)
    _write_json(out / "validation.json", report)
    nx = exp.model.nx
    t = exp.scenario.dt * np.arange(1, res.n_steps + 1)
    sig2 = 2.0 * np.sqrt(np.diagonal(res.P_post, axis1=-2, axis2=-1))
    _write_csv(out / "validation_trace.csv",
               ["step", "t"] + [f"e{j}" for j in range(nx)] + [f"two_sigma{j}" for j in range(nx)],
               [(k + 1, t[k], *res.errors[0, k], *sig2[k]) for k in range(res.n_steps)])
    _write_csv(out / "validation_stats.csv", ["step", "t", "nees_avg", "nis_avg"],
               [(k + 1, t[k], res.nees[:, k].mean(), res.nis[:, k].mean()) for k in range(res.n_steps)])


COMMANDS = {"scan": cmd_scan, "oracle": cmd_oracle, "tune": cmd_tune, "validate": cmd_validate}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kfat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=False):
        sp.add_argument("--config", type=str, default=None, help="JSON experiment config")
        sp.add_argument("--out", type=str, required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--runs", type=int, default=None, help="Monte Carlo runs N")
        sp.add_argument("--steps", type=int, default=None, help="filter steps T")
        sp.add_argument("--dt-list", dest="dt_list", type=str, default=None, help="e.g. 0.1,0.5")
        sp.add_argument("--metric", choices=[k.value for k in CostKind], default=None)
        sp.add_argument("--sensor", choices=["integrating", "non_integrating"], default=None)
        if grid:
            sp.add_argument("--grid", type=str, default="0.1:5:50,0.01:0.5:50", help="Vlo:Vhi:n,Wlo:Whi:n (log)")

    sp = sub.add_parser("scan", help="Monte Carlo cost surfaces")
    common(sp, grid=True)
    sp = sub.add_parser("oracle", help="closed-form NEES surfaces")
    common(sp, grid=True)
    sp.add_argument("--band", type=str, default="1.995,2.005")
    sp.add_argument("--dt-sweep", dest="dt_sweep", type=str, default=None, help="lo:hi:n sample times")
    sp.add_argument("--q", type=str, default=None, help="V...,W... for the dt sweep")
    sp = sub.add_parser("tune", help="tuning trials")
    common(sp)
    sp.add_argument("--method", type=str, default="gpbo", help="|".join(METHODS))
    sp.add_argument("--trials", type=int, default=1)
    sp.add_argument("--n-seed", dest="n_seed", type=int, default=None)
    sp.add_argument("--n-iter", dest="n_iter", type=int, default=None)
    sp = sub.add_parser("validate", help="consistency report at given intensities")
    common(sp)
    sp.add_argument("--q", type=str, default=None, help="V...,W...")
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--confidence", type=float, default=0.95)
    sp = sub.add_parser("rerun", help="repeat a command from its manifest")
    sp.add_argument("manifest", type=str)
    sp.add_argument("--out", type=str, default=None, help="override output directory")
    return p


def _error(out: Path | None, exc: BaseException, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "error.json", record)
        except OSError:
            pass
    return code


def _rerun(args) -> int:
    with open(args.manifest) as fh:
        man = json.load(fh)
    argv = list(man["argv"])
    if args.out is not None:
        argv[argv.index("--out") + 1] = args.out
    recorded = list(argv)
    # replay against the resolved config stored in the manifest, not the
    # (possibly edited) original file
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "config.json"
        _write_json(cfg_path, man["config"])
        if "--config" in argv:
            argv[argv.index("--config") + 1] = str(cfg_path)
        else:
            argv += ["--config", str(cfg_path)]
        return main(argv, _replay=(recorded, man.get("config_path")))


def main(argv=None, _replay=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _error(None, exc, 2)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command == "rerun":
        try:
            return _rerun(args)
        except (OSError, KeyError, ValueError) as exc:
            return _error(None, exc, 2)

    out = Path(args.out)
    try:
        exp = _resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, exp, out)
        # a replay records the original command line, not the temporary config
        argv_rec, config_path = _replay if _replay is not None else (argv, args.config)
        _write_json(out / "manifest.json", {
            "command": args.command,
            "config_path": config_path,
            "output_dir": str(out),
            "seed": exp.tuner.seed,
            "tool_version": _tool_version(),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "argv": argv_rec,
            "config": exp.to_dict(),
        })
    except UsageError as exc:
        return _error(out, exc, 2)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable record
        return _error(out, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
