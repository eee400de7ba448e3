import math
import os
import sys

import shazam

assert shazam.extraction_depths(12) == (3, 7, 12)
assert abs(shazam.distill_pair([1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]) - 1.25) < 1e-12
assert abs(shazam.distill_total([[1.0]] * 3, [[[2.0]]] * 3)) < 1e-12
assert abs(shazam.pcc([1.0, 2.0, 3.0], [2.0, 4.0, 7.0]) - 0.9933992677987828) < 1e-9
assert shazam.concordance_index([3.0, 2.0, 1.0], [1.0, 2.0, 3.0], [True, True, True]) == 1.0

stat, p, exact = shazam.wilcoxon([2.0, 3.0, 4.0, 5.0, 6.0], [1.0] * 5, "greater")
assert exact and stat == 15.0 and abs(p - 1 / 32) < 1e-12

times, surv = shazam.kaplan_meier([1.0, 2.0, 3.0], [True, True, True])
assert times == [1.0, 2.0, 3.0] and abs(surv[0] - 2 / 3) < 1e-12

try:
    shazam.extraction_depths(0)
except ValueError:
    pass
else:
    sys.exit("depth 0 accepted")

bench = os.path.join(os.path.dirname(__file__), "..", "..", "..", "fixtures", "benchmarks")
if os.path.isdir(bench):
    ranks = shazam.rank_benchmarks(bench)
    mean_rank, firsts = ranks["Shazam"]
    assert math.isclose(mean_rank, 1.2, abs_tol=0.05), mean_rank

print("smoke test ok")
