"""Command-line entry point: ``asyncnet {stability,moments,simulate,verify}``.

Exit codes: 0 pass, 1 a checked condition failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import records
from .config import FIXTURES, ConfigError, ExperimentConfig, fixture_path, parse_config
from .engine import run_experiment, steady_state
from .stability import bound_envelope, fourth_bound, write_report
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _f(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def load_config(arg: str) -> ExperimentConfig:
    """A config path, or the name of a bundled fixture."""
    path = Path(arg)
    if not path.exists() and arg in FIXTURES:
        path = fixture_path(arg)
    return parse_config(path)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(args, cfg: ExperimentConfig) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["n_trials"] = args.trials
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    return cfg.with_run(**changes) if changes else cfg


# --- commands ----------------------------------------------------------------

def command_stability(cfg: ExperimentConfig, out: Path) -> int:
    report = cfg.scenario().report()
    write_report(report, out / "stability.txt", out / "stability_agents.csv")
    print(f"beta={report.beta:.6g} theta={report.theta:.6g} nu_o={report.nu_o:.6g} nu={report.nu:.6g}")
    print(f"b*nu_o={report.msd_bound:.6g} steady-state limit={report.steady_state_limit:.6g}")
    print(f"mean-square condition: {report.ms_status} (relaxed: {report.ms_relaxed_status}); "
          f"fourth-order condition: {report.fourth_status}")
    return EXIT_OK if report.ms_condition else EXIT_FAIL


def command_moments(cfg: ExperimentConfig, out: Path) -> int:
    scn = cfg.scenario()
    ms = scn.moments()
    N = ms.n_agents
    _write_rows(out / "step_moments.csv", ("agent", "m1", "m2", "m4", "c_mu"),
                [[k, *(_f(v) for v in ms.mu_moments[k]), _f(ms.c_mu[k])] for k in range(N)])
    _write_rows(out / "abar.csv", ("from", "to", "value"),
                [[l, k, _f(ms.Abar[l, k])] for l in range(N) for k in range(N)])
    C = ms.C_A_dense()
    nz = np.argwhere(C != 0)
    _write_rows(out / "c_a.csv", ("row", "col", "value"), [[i, j, _f(C[i, j])] for i, j in nz])
    scn.graph.to_edge_csv(out / "network.csv")
    print(f"wrote moments for {N} agents ({len(nz)} nonzero C_A entries) to {out}")
    return EXIT_OK


def simulation_summary(cfg: ExperimentConfig, rec) -> list[list]:
    """Rows ``(check, value, se, bound, status)`` comparing the run with the analytic bounds."""
    scn = cfg.scenario()
    report = scn.report()
    rows = [["msd_max_initial", _f(rec.msd_max[0]), _f(rec.msd_max_se[0]), "", "info"],
            ["trials_used", str(rec.n_used), "", str(rec.n_trials), "info"],
            ["trials_diverged", str(int(rec.diverged.sum())), "", "", "info"]]
    if not report.ms_condition:
        hit = bool(np.any(rec.peak_msd > 1e6))
        rows.append(["divergence_observed", _f(rec.peak_msd.max()), "", _f(1e6), "pass" if hit else "fail"])
        return rows
    try:
        ss = steady_state(rec, cfg.run.window_fraction)
    except ValueError as exc:
        rows.append(["steady_state", "", "", "", f"n/a: {exc}"])
        return rows
    m, d, p, q = ss["msd_max"], ss["disagreement_mean"], ss["disagreement_maxpair"], ss["m4_max"]
    env = bound_envelope(report, scn.eps0_sq(), rec.horizon)
    excess = float(np.max(rec.msd_max - env.values - 2 * rec.msd_max_se))
    status = lambda ok: "pass" if ok else "fail"
    rows += [
        ["msd_max_vs_b_nu_o", _f(m.value), _f(m.se), _f(report.msd_bound),
         status(m.value + 2 * m.se <= report.msd_bound)],
        ["msd_max_vs_envelope_limit", _f(m.value), _f(m.se), _f(env.limit),
         status(m.value <= env.limit + 2 * m.se)],
        ["envelope_dominance_worst_excess", _f(excess), "", "0.0", status(excess <= 0)],
        ["disagreement_mean", _f(d.value), _f(d.se), "", "info"],
        ["disagreement_maxpair", _f(p.value), _f(p.se), "", "info"],
    ]
    if report.fourth_condition:
        b4 = fourth_bound(report)
        rows.append(["m4_max_vs_fourth_bound", _f(q.value), _f(q.se), _f(b4), status(q.value <= b4 + 2 * q.se)])
    else:
        rows.append(["m4_max", _f(q.value), _f(q.se), "", "info: fourth-order condition " + report.fourth_status])
    return rows


def command_simulate(cfg: ExperimentConfig, out: Path) -> int:
    run = cfg.run
    rec = run_experiment(cfg, run.n_trials, run.horizon, run.base_seed)
    records.write_record(rec, out)
    cfg.graph.to_edge_csv(out / "network.csv")
    rows = simulation_summary(cfg, rec)
    _write_rows(out / "summary.csv", ("check", "value", "se", "bound", "status"), rows)
    for check, value, se, bound, st in rows:
        print(f"{check}: {value}" + (f" +- {se}" if se else "") + (f" (bound {bound})" if bound else "")
              + f" [{st}]")
    failed = any(r[4] == "fail" for r in rows)
    return EXIT_FAIL if failed or not cfg.scenario().report().ms_condition else EXIT_OK


def command_verify(cfg: ExperimentConfig, out: Path, suite: str) -> int:
    run = cfg.run
    checks = run_suite(cfg, suite, n_trials=run.n_trials, horizon=run.horizon, seed=run.base_seed,
                       window_fraction=run.window_fraction)
    _write_rows(out / f"verify_{suite}.csv", ("suite", "check", "status", "measured", "tolerance", "detail"),
                [[c.suite, c.name, c.status, _f(c.measured), _f(c.tolerance), c.detail] for c in checks])
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asyncnet", description="Asynchronous diffusion network experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--config", required=True,
                       help=f"JSON config path or a bundled fixture ({', '.join(FIXTURES)})")
        p.add_argument("--out", help="output directory (default: the config's outputs.directory)")
        if run_flags:
            p.add_argument("--seed", type=_u64, help="override run.base_seed")
            p.add_argument("--trials", type=_positive, help="override run.n_trials")
            p.add_argument("--horizon", type=_nonneg, help="override run.horizon")

    common(sub.add_parser("stability", help="evaluate the stability conditions and bounds"), run_flags=False)
    common(sub.add_parser("moments", help="write the analytic moment model"), run_flags=False)
    common(sub.add_parser("simulate", help="run the Monte-Carlo experiment"))
    v = sub.add_parser("verify", help="run named verification suites")
    v.add_argument("suite", choices=SUITES + ("all",))
    common(v)
    return parser


def _int_arg(lo, hi=None):
    def parse(text):
        try:
            val = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
        if val < lo or (hi is not None and val > hi):
            raise argparse.ArgumentTypeError(f"{val} out of range")
        return val
    return parse


_u64 = _int_arg(0, 2 ** 64 - 1)
_positive = _int_arg(1)
_nonneg = _int_arg(0)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(args, load_config(args.config))
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error: {path}: {msg}" if path else f"config error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    out = _out_dir(args, cfg)
    if args.command == "stability":
        return command_stability(cfg, out)
    if args.command == "moments":
        return command_moments(cfg, out)
    if args.command == "simulate":
        return command_simulate(cfg, out)
    return command_verify(cfg, out, args.suite)


if __name__ == "__main__":
    sys.exit(main())
