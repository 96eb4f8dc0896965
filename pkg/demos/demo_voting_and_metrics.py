"""The voting strategy and the vote-weighted quality metrics, end to end.

Simulates volunteer choices for a few images, ranks the voted cells with
the global-count tie-break, builds weighted groundtruth sets, and scores
candidate smoothers on WRMSE/WMAE, ending with a leaderboard table.
"""

import numpy as np

from epsbench.groundtruth import GroundTruthSet
from epsbench.metrics import (
    VoteTally, greedy_param_search, pooled_errors, rank_votes, select_top5,
)
from epsbench.reports import format_leaderboard, rows_from_report

rng = np.random.default_rng(7)

print("== a vote tally with forced ties ==")
counts = np.zeros((7, 8), dtype=np.int64)
counts[5, 3] = 5   # method 6, setting 4: five volunteers
counts[0, 1] = 3   # tied pair at three votes each...
counts[2, 2] = 3
counts[4, 0] = 2
counts[6, 7] = 1
other = np.zeros((7, 8), dtype=np.int64)
other[2, 2] = 300  # ...broken by the global count of (3, 3)
other[0, 1] = 40
tally = VoteTally({"img0": counts, "bulk": other})
print("ranking for img0 (method, setting, votes):")
for m, p, c in rank_votes(tally, "img0"):
    print(f"  m{m} p{p}: {c} votes  (global {int(tally.global_counts[m-1, p-1])})")

print("\n== weighted groundtruth set ==")
h = w = 6
images = {(m, p): rng.uniform(0, 1, (h, w, 3)) for m in range(1, 8) for p in range(1, 9)}
gts = select_top5(tally, "img0", lambda m, p: images[(m, p)])
print(f"kept picks: {gts.picks}")
print(f"weights:    {np.round(gts.weights, 4)} (sum {gts.weights.sum():.0f})")

print("\n== WRMSE / WMAE of two candidate outputs ==")
perfect = images[gts.picks[0]]
noisy = np.clip(perfect + rng.normal(0, 0.05, perfect.shape), 0, 1)
for name, out in [("top-1 target itself", perfect), ("noisy copy", noisy)]:
    r, a = pooled_errors({"img0": out}, {"img0": gts})
    print(f"  {name:<20} WRMSE {r:6.2f}   WMAE {a:6.2f}   (0-255 scale)")

print("\n== greedy parameter search leaderboard ==")
y = rng.uniform(0, 1, (h, w, 3))
sets = {"t": GroundTruthSet(targets=[y], weights=np.array([1.0]), source_id="t")}
grid = {}
for m in range(1, 4):
    grid[f"method{m}"] = {}
    for p in range(1, 9):
        # noise grows with the setting except a planted optimum at (2, 3)
        if (m, p) == (2, 3):
            out = y.copy()
        else:
            out = np.clip(y + rng.normal(0, 0.01 * p + 0.01 * m, y.shape), 0, 1)
        grid[f"method{m}"][p] = {"t": out}
report = greedy_param_search(grid, sets)
print(format_leaderboard(rows_from_report(report)))
