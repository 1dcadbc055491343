# Regenerates ttest_reference.json (scipy.stats.ttest_rel).
import json
import numpy as np
from scipy import stats

rng = np.random.default_rng(20240601)
cases = []
for _ in range(50):
    a = rng.normal(0.75, 0.02, 10)
    b = a + rng.normal(rng.uniform(-0.01, 0.01), 0.01, 10)
    r = stats.ttest_rel(a, b)
    cases.append({"a": a.tolist(), "b": b.tolist(), "t": float(r.statistic), "p": float(r.pvalue)})
with open("ttest_reference.json", "w") as f:
    json.dump(cases, f, indent=1)
