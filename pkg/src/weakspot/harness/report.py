"""Plot-ready report tables computed from re-evaluated rankings.

Three tab-separated files per report, each starting with a
``# format_version=<n>`` comment line:

``<prefix>_ranks.tsv``
    rank, id, score, m, lcb, ucb, reeval_mean, reeval_m, tie_group
``<prefix>_curve.tsv``
    k, cumulative_average, running_min, running_max, expected_average
``<prefix>_whiskers.tsv``
    rank, lcb, ucb, reeval_mean (first ``whiskers`` ranks only)

``expected_average`` is the cumulative average expected under uniformly
random ordering inside each group of exactly tied scores; without ties it
equals ``cumulative_average``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from weakspot.optimizer import tie_groups

REPORT_VERSION = 1


def cumulative_average(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.cumsum(v) / np.arange(1, v.size + 1)


def expected_cumulative_average(scores: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """Cumulative average when members of each tie group are shuffled uniformly.

    Every member of a group is equally likely to sit in each of the group's
    positions, so a cutoff that takes ``j`` slots of a group collects ``j``
    times the group's mean value in expectation.
    """
    v = np.asarray(values, dtype=np.float64)
    sums = np.empty(v.size)
    running = 0.0
    for start, stop in tie_groups(list(scores)):
        group_mean = v[start:stop].mean()
        for j in range(start, stop):
            sums[j] = running + (j - start + 1) * group_mean
        running += v[start:stop].sum()
    return sums / np.arange(1, v.size + 1)


@dataclass
class Report:
    mode: str
    rows: list  # dicts with rank, id, score, m, lcb, ucb, reeval_mean, reeval_m
    groups: list  # (start, stop) tie groups over the ranked scores

    @property
    def values(self) -> np.ndarray:
        return np.array([r["reeval_mean"] for r in self.rows], dtype=np.float64)

    @property
    def curve(self) -> np.ndarray:
        return cumulative_average(self.values)

    @property
    def running_min(self) -> np.ndarray:
        return np.minimum.accumulate(self.values)

    @property
    def running_max(self) -> np.ndarray:
        return np.maximum.accumulate(self.values)

    @property
    def expected_curve(self) -> np.ndarray:
        return expected_cumulative_average([r["score"] for r in self.rows], self.values)

    def at(self, k: int) -> dict:
        """Curve values at cutoff ``k`` (1-based)."""
        j = k - 1
        return {
            "cumulative_average": float(self.curve[j]),
            "running_min": float(self.running_min[j]),
            "running_max": float(self.running_max[j]),
            "expected_average": float(self.expected_curve[j]),
        }


def build_report(rows, mode: str) -> Report:
    """``mode`` is ``lcb`` (adaptive runs) or ``mean`` (uniform runs)."""
    dicts = [r.to_dict() if hasattr(r, "to_dict") else dict(r) for r in rows]
    return Report(mode, dicts, tie_groups([r["score"] for r in dicts]))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write(path: Path, columns: Sequence[str], rows) -> None:
    with path.open("w") as fh:
        fh.write(f"# format_version={REPORT_VERSION}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def write_report(report: Report, out_dir: str | Path, prefix: str = "report", whiskers: int = 100) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    group_of = {}
    for g, (start, stop) in enumerate(report.groups):
        for j in range(start, stop):
            group_of[j] = g
    paths = [out / f"{prefix}_ranks.tsv", out / f"{prefix}_curve.tsv", out / f"{prefix}_whiskers.tsv"]
    _write(
        paths[0],
        ("rank", "id", "score", "m", "lcb", "ucb", "reeval_mean", "reeval_m", "tie_group"),
        (
            (r["rank"], json.dumps(r["id"]), r["score"], r["m"], r["lcb"], r["ucb"], r["reeval_mean"], r["reeval_m"],
             group_of[j])
            for j, r in enumerate(report.rows)
        ),
    )
    if report.rows:
        curve_rows = zip(
            range(1, len(report.rows) + 1),
            report.curve.tolist(),
            report.running_min.tolist(),
            report.running_max.tolist(),
            report.expected_curve.tolist(),
        )
    else:
        curve_rows = ()
    _write(paths[1], ("k", "cumulative_average", "running_min", "running_max", "expected_average"), curve_rows)
    _write(
        paths[2],
        ("rank", "lcb", "ucb", "reeval_mean"),
        ((r["rank"], r["lcb"], r["ucb"], r["reeval_mean"]) for r in report.rows[:whiskers]),
    )
    return paths


def read_table(path: str | Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    if not lines:
        return []
    columns = lines[0].split("\t")
    return [dict(zip(columns, ln.split("\t"))) for ln in lines[1:]]
