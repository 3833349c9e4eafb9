"""Report emission: a master CSV plus one CSV + SVG per declared plot.

Declared plots (emitted whenever their phase rows exist in the results):
  loss_curves          erase-phase loss series vs iteration
  mi_vs_iteration      erase-phase plug-in MI probes (nats)
  tradeoff_frontier    sweep-phase residual MI (nats) vs neutral FD^2
  attack_success_vs_q  attack success per strategy vs query count
"""

from __future__ import annotations

import csv
import os
import re

from .results import COLUMNS, ResultsRow
from .svgplot import line_plot


class ReportError(ValueError):
    pass


def _series(rows, phase, prefix):
    """Rows 'prefix[i]' -> sorted (i, value) pairs."""
    pat = re.compile(re.escape(prefix) + r"\[(-?[0-9.eE+-]+)\]$")
    out = []
    for r in rows:
        if r.phase != phase:
            continue
        m = pat.match(r.metric)
        if m:
            out.append((float(m.group(1)), r.value))
    out.sort()
    return [x for x, _ in out], [y for _, y in out]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def emit_report(rows: list[ResultsRow], out_dir: str) -> list[str]:
    """Write report files under out_dir; returns the artifact paths."""
    if not rows:
        raise ReportError("no results rows to report")
    os.makedirs(out_dir, exist_ok=True)
    artifacts = []

    master = os.path.join(out_dir, "report.csv")
    _write_csv(master, COLUMNS,
               [(r.run_id, r.phase, r.metric, r.value,
                 "" if r.slack is None else r.slack, r.inputs_digest)
                for r in rows])
    artifacts.append(master)

    # loss curves
    loss_series = []
    for name in ("l_adv", "l_traj", "l_total", "disc_loss"):
        xs, ys = _series(rows, "erase", name)
        if xs:
            loss_series.append((name, xs, ys))
    if loss_series:
        path = os.path.join(out_dir, "loss_curves.svg")
        line_plot(path, loss_series, "Erasure losses", "iteration", "loss")
        artifacts.append(path)
        csv_path = os.path.join(out_dir, "loss_curves.csv")
        _write_csv(csv_path, ("series", "iteration", "value"),
                   [(n, x, y) for n, xs, ys in loss_series for x, y in zip(xs, ys)])
        artifacts.append(csv_path)

    xs, ys = _series(rows, "erase", "mi_probe")
    if xs:
        path = os.path.join(out_dir, "mi_vs_iteration.svg")
        line_plot(path, [("plug-in MI", xs, ys)], "Residual information during erasure",
                  "iteration", "mutual information (nats)", markers=True)
        artifacts.append(path)
        csv_path = os.path.join(out_dir, "mi_vs_iteration.csv")
        _write_csv(csv_path, ("iteration", "mi_nats"), list(zip(xs, ys)))
        artifacts.append(csv_path)

    lam_mi = _series(rows, "sweep", "mi")
    lam_fd = _series(rows, "sweep", "fd2_neutral")
    if lam_mi[0]:
        path = os.path.join(out_dir, "tradeoff_frontier.svg")
        line_plot(path, [("frontier", lam_fd[1], lam_mi[1])],
                  "Erasure / fidelity trade-off (one point per lambda)",
                  "neutral FD^2", "residual MI (nats)", markers=True)
        artifacts.append(path)
        csv_path = os.path.join(out_dir, "tradeoff_frontier.csv")
        _write_csv(csv_path, ("lambda", "mi_nats", "fd2_neutral"),
                   [(l, m, f) for (l, m), f in zip(zip(lam_mi[0], lam_mi[1]), lam_fd[1])])
        artifacts.append(csv_path)

    attack_series = {}
    pat = re.compile(r"attack_success\.(.+)\.q(\d+)$")
    for r in rows:
        if r.phase != "attack":
            continue
        m = pat.match(r.metric)
        if m:
            attack_series.setdefault(m.group(1), []).append((int(m.group(2)), r.value))
    if attack_series:
        series = []
        for strat in sorted(attack_series):
            pts = sorted(attack_series[strat])
            series.append((strat, [p[0] for p in pts], [p[1] for p in pts]))
        path = os.path.join(out_dir, "attack_success_vs_q.svg")
        line_plot(path, series, "Adaptive attack success", "queries q",
                  "success (accuracy)", markers=True)
        artifacts.append(path)
        csv_path = os.path.join(out_dir, "attack_success_vs_q.csv")
        _write_csv(csv_path, ("strategy", "q", "success"),
                   [(s, q, v) for s, qs, vs in series for q, v in zip(qs, vs)])
        artifacts.append(csv_path)

    return artifacts
