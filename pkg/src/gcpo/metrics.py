"""Metrics-log schema shared by every writer and reader.

Comma-delimited UTF-8 with a header row; one row per training iteration.
Column order is fixed: iteration, env_steps, phase, alpha, mean_reward, the
per-constraint discounted cost returns, per-tier violation fractions, mean_kl,
entropy, clip_fraction, per-constraint surrogate values, accepted,
line_search_depth, per-constraint violation fractions, batch_raw_steps.
"""

from __future__ import annotations

import math


def metrics_columns(kappa_ids):
    cols = ["iteration", "env_steps", "phase", "alpha", "mean_reward"]
    cols += [f"jc_{k}" for k in kappa_ids]
    cols += ["viol_rho", "viol_kappa", "viol_eta", "mean_kl", "entropy",
             "clip_fraction"]
    cols += [f"surr_{k}" for k in kappa_ids]
    cols += ["accepted", "line_search_depth"]
    cols += [f"viol_{k}" for k in kappa_ids]
    cols += ["batch_raw_steps"]
    return cols


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int,)):
        return str(x)
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".10g")


def record_row(rec, kappa_ids):
    vals = [rec.iteration, rec.env_steps, rec.phase, rec.alpha, rec.mean_reward]
    vals += [rec.jc[i] for i in range(len(kappa_ids))]
    vals += [rec.viol_rho, rec.viol_kappa, rec.viol_eta, rec.mean_kl,
             rec.entropy, rec.clip_fraction]
    vals += [rec.surrogates[i] for i in range(len(kappa_ids))]
    vals += [rec.accepted, rec.line_search_depth]
    vals += [rec.viol_per_kappa[i] for i in range(len(kappa_ids))]
    vals += [rec.batch_raw_steps]
    return ",".join(_fmt(v) for v in vals)


class MetricsWriter:
    """Appends rows as they arrive; flushes per row so logs survive halts."""

    def __init__(self, path, kappa_ids):
        self.kappa_ids = list(kappa_ids)
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(",".join(metrics_columns(self.kappa_ids)) + "\n")
        self._fh.flush()

    def __call__(self, rec):
        self._fh.write(record_row(rec, self.kappa_ids) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Parse a metrics log into a list of dicts (floats where possible)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = {}
            for key, val in zip(header, parts):
                if key == "phase":
                    row[key] = val
                elif val == "":
                    row[key] = float("nan")
                else:
                    try:
                        row[key] = int(val)
                    except ValueError:
                        row[key] = float(val)
            rows.append(row)
    return rows
