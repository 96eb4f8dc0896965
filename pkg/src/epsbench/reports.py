"""Plain-text report tables and their machine-readable twins.

The leaderboard mirrors the benchmark's method-evaluation table (minimum
WRMSE/WMAE with the optimal setting per method); the timing table mirrors
the run-time comparison. Rank markers [1]/[2]/[3] tag the best, second and
third best value in each metric column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

from .metrics import MetricReport


@dataclass(frozen=True)
class LeaderboardRow:
    method: str
    wrmse: float
    wrmse_param: Optional[int]  # None for parameter-free methods (models)
    wmae: float
    wmae_param: Optional[int]


def _ranks(values: Sequence[float], best_is_low: bool = True) -> dict[int, int]:
    """Map row index -> rank marker (1..3) for the three best values."""
    order = sorted(range(len(values)), key=lambda i: values[i], reverse=not best_is_low)
    return {idx: r + 1 for r, idx in enumerate(order[:3])}


def rows_from_report(report: MetricReport) -> list[LeaderboardRow]:
    return [LeaderboardRow(m.name, m.wrmse_min, m.wrmse_argp, m.wmae_min, m.wmae_argp)
            for m in report.methods]


def format_leaderboard(rows: Sequence[LeaderboardRow]) -> str:
    """Aligned text table: method, WRMSE* with setting, WMAE* with setting."""
    wr_rank = _ranks([r.wrmse for r in rows])
    wm_rank = _ranks([r.wmae for r in rows])
    lines = [f"{'Method':<16}{'WRMSE*':>9}{'p':>4}{'':>5}{'WMAE*':>9}{'p':>4}{'':>5}".rstrip()]
    lines.append("-" * 52)
    for i, r in enumerate(rows):
        wr_m = f"[{wr_rank[i]}]" if i in wr_rank else ""
        wm_m = f"[{wm_rank[i]}]" if i in wm_rank else ""
        wr_p = str(r.wrmse_param) if r.wrmse_param is not None else "-"
        wm_p = str(r.wmae_param) if r.wmae_param is not None else "-"
        lines.append(
            f"{r.method:<16}{r.wrmse:>9.2f}{wr_p:>4}{wr_m:>5}"
            f"{r.wmae:>9.2f}{wm_p:>4}{wm_m:>5}".rstrip())
    return "\n".join(lines) + "\n"


def leaderboard_records(rows: Sequence[LeaderboardRow]) -> list[dict]:
    """Structured rows (JSON-serializable) matching the text table."""
    wr_rank = _ranks([r.wrmse for r in rows])
    wm_rank = _ranks([r.wmae for r in rows])
    return [
        {
            "method": r.method,
            "wrmse": round(r.wrmse, 6),
            "wrmse_param": r.wrmse_param,
            "wrmse_rank": wr_rank.get(i),
            "wmae": round(r.wmae, 6),
            "wmae_param": r.wmae_param,
            "wmae_rank": wm_rank.get(i),
        }
        for i, r in enumerate(rows)
    ]


def leaderboard_jsonl(rows: Sequence[LeaderboardRow]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n"
                   for rec in leaderboard_records(rows))


def format_timing_row(method: str, seconds: float, marker: str = "") -> str:
    return f"{method:<16}{seconds:>10.2f}{marker:>5}".rstrip()


def format_timing_table(rows: Sequence[tuple[str, float]]) -> str:
    """Aligned text table of mean seconds per image, fastest three marked."""
    rank = _ranks([s for _, s in rows])
    lines = [f"{'Method':<16}{'Time (s)':>10}".rstrip(), "-" * 31]
    for i, (name, secs) in enumerate(rows):
        marker = f"[{rank[i]}]" if i in rank else ""
        lines.append(format_timing_row(name, secs, marker))
    return "\n".join(lines) + "\n"


def timing_jsonl(rows: Sequence[tuple[str, float]]) -> str:
    rank = _ranks([s for _, s in rows])
    return "".join(
        json.dumps({"method": name, "seconds": round(secs, 6),
                    "rank": rank.get(i)}, sort_keys=True) + "\n"
        for i, (name, secs) in enumerate(rows))
