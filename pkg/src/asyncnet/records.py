"""CSV serialization of experiment records.

Floats are written with ``repr`` so that reading the files back reproduces
the in-memory record bit for bit.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .engine import ExperimentRecord

TIMESERIES = "timeseries.csv"
NETWORK_SERIES = "network_timeseries.csv"
TRIALS = "trials.csv"

_AGENT_COLS = ("msd", "msd_se", "disagreement", "disagreement_se", "m4", "m4_se")
_NET_COLS = ("msd_max", "msd_max_se", "disagreement_mean", "disagreement_mean_se",
             "disagreement_maxpair", "disagreement_maxpair_se", "m4_max", "m4_max_se")


def _f(x) -> str:
    return repr(float(x))


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_record(rec: ExperimentRecord, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / TIMESERIES, out / NETWORK_SERIES, out / TRIALS]
    fh, w = _writer(paths[0])
    with fh:
        w.writerow(("iter", "agent") + _AGENT_COLS)
        cols = [getattr(rec, c) for c in _AGENT_COLS]
        for t in range(rec.horizon + 1):
            for k in range(rec.n_agents):
                w.writerow([t, k] + [_f(c[t, k]) for c in cols])
    fh, w = _writer(paths[1])
    with fh:
        w.writerow(("iter",) + _NET_COLS)
        cols = [getattr(rec, c) for c in _NET_COLS]
        for t in range(rec.horizon + 1):
            w.writerow([t] + [_f(c[t]) for c in cols])
    fh, w = _writer(paths[2])
    with fh:
        w.writerow(("trial", "seed", "diverged", "divergence_iter", "peak_msd", "used"))
        for i in range(rec.n_trials):
            w.writerow([i, int(rec.seeds[i]), int(rec.diverged[i]), int(rec.divergence_iter[i]),
                        _f(rec.peak_msd[i]), int(rec.used[i])])
    return paths


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_record(out_dir) -> ExperimentRecord:
    out = Path(out_dir)
    agent_rows = _rows(out / TIMESERIES)
    T = max(int(r["iter"]) for r in agent_rows) + 1
    N = max(int(r["agent"]) for r in agent_rows) + 1
    series = {c: np.empty((T, N)) for c in _AGENT_COLS}
    for r in agent_rows:
        t, k = int(r["iter"]), int(r["agent"])
        for c in _AGENT_COLS:
            series[c][t, k] = float(r[c])
    net_rows = _rows(out / NETWORK_SERIES)
    for c in _NET_COLS:
        series[c] = np.array([float(r[c]) for r in net_rows])
    trials = _rows(out / TRIALS)
    seeds = np.array([int(r["seed"]) for r in trials], dtype=np.uint64)
    return ExperimentRecord(
        **series,
        seeds=seeds,
        diverged=np.array([r["diverged"] == "1" for r in trials]),
        divergence_iter=np.array([int(r["divergence_iter"]) for r in trials], dtype=np.int64),
        peak_msd=np.array([float(r["peak_msd"]) for r in trials]),
        used=np.array([r["used"] == "1" for r in trials]),
        base_seed=int(seeds[0]),
    )
