"""Machine-readable result emission.

Two artifacts per run: a per-seed file and a summary file. The per-seed
CSV has header `policy,seed,t,cum_regret,mean_flag`; rows with mean_flag 0
are individual (policy, seed, checkpoint) cumulative regrets, and one row
per (policy, checkpoint) with seed -1 and mean_flag 1 carries the mean.
The summary CSV has header `policy,t,mean_cum_regret,ci_halfwidth`. JSON
output mirrors the same records in one file. Floats are written with 17
significant digits, so parsing returns the exact binary values and
re-running the same config and seed reproduces identical bytes.
"""

from __future__ import annotations

import json
import os

from .simulate import Aggregate

RESULTS_HEADER = "policy,seed,t,cum_regret,mean_flag"
SUMMARY_HEADER = "policy,t,mean_cum_regret,ci_halfwidth"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _result_records(aggregate: Aggregate):
    for row in aggregate.rows:
        yield {
            "policy": row.policy, "seed": row.seed, "t": row.t,
            "cum_regret": row.cum_regret, "mean_flag": 0,
        }
    for row in aggregate.summary:
        yield {
            "policy": row.policy, "seed": -1, "t": row.t,
            "cum_regret": row.mean_cum_regret, "mean_flag": 1,
        }


def _summary_records(aggregate: Aggregate):
    for row in aggregate.summary:
        yield {
            "policy": row.policy, "t": row.t,
            "mean_cum_regret": row.mean_cum_regret,
            "ci_halfwidth": row.ci_halfwidth,
        }


def emit_results(aggregate: Aggregate, traces=None, format: str = "csv",
                 path: str = "results") -> list:
    """Write the aggregate under directory `path`; returns written files."""
    if not aggregate.rows:
        raise ValueError("aggregate is empty, nothing to emit")
    if format not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {format!r}")
    os.makedirs(path, exist_ok=True)
    written = []
    if format == "csv":
        results_path = os.path.join(path, "results.csv")
        with open(results_path, "w", encoding="utf-8", newline="\n") as out:
            out.write(RESULTS_HEADER + "\n")
            for rec in _result_records(aggregate):
                out.write(
                    f"{rec['policy']},{rec['seed']},{rec['t']},"
                    f"{_fmt(rec['cum_regret'])},{rec['mean_flag']}\n"
                )
        written.append(results_path)
        summary_path = os.path.join(path, "summary.csv")
        with open(summary_path, "w", encoding="utf-8", newline="\n") as out:
            out.write(SUMMARY_HEADER + "\n")
            for rec in _summary_records(aggregate):
                out.write(
                    f"{rec['policy']},{rec['t']},"
                    f"{_fmt(rec['mean_cum_regret'])},"
                    f"{_fmt(rec['ci_halfwidth'])}\n"
                )
        written.append(summary_path)
    else:
        payload = {
            "results": list(_result_records(aggregate)),
            "summary": list(_summary_records(aggregate)),
        }
        json_path = os.path.join(path, "results.json")
        with open(json_path, "w", encoding="utf-8", newline="\n") as out:
            json.dump(payload, out, indent=2)
            out.write("\n")
        written.append(json_path)
    return written


GIC_HEADER = "rank,gic_score"


def emit_gic(selected_rank: int, scores, format: str = "csv",
             path: str = "results") -> list:
    """Write the per-rank information-criterion scan; returns written files.

    scores is an iterable of (rank, score) pairs as produced by gic_search.
    """
    pairs = [(int(r), float(s)) for r, s in scores]
    if not pairs:
        raise ValueError("scores is empty, nothing to emit")
    if format not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {format!r}")
    os.makedirs(path, exist_ok=True)
    if format == "csv":
        out_path = os.path.join(path, "gic.csv")
        with open(out_path, "w", encoding="utf-8", newline="\n") as out:
            out.write(GIC_HEADER + "\n")
            for rank, score in pairs:
                out.write(f"{rank},{_fmt(score)}\n")
    else:
        out_path = os.path.join(path, "gic.json")
        payload = {
            "selected_rank": int(selected_rank),
            "scores": [
                {"rank": rank, "gic_score": score} for rank, score in pairs
            ],
        }
        with open(out_path, "w", encoding="utf-8", newline="\n") as out:
            json.dump(payload, out, indent=2)
            out.write("\n")
    return [out_path]
