"""Hierarchical logistic regression under different privacy budgets.

A shortened version of the full experiment (see ``dpvi train --model hlr``):
fewer iterations and seeds, so it finishes in a few minutes.

    python demos/hlr_privacy_tradeoff.py [iterations]
"""

import sys

from dpvi.harness import experiments as ex

T = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
base = ex.ExperimentConfig.preset("hlr", T=T, repeats=2)

print(f"HLR, N={base.N}, B={base.B}, T={T}, delta=1/N")
for eps in (None, 4.0, 2.0, 1.0):
    res = ex.run_experiment(ex.with_changes(base, epsilon=eps))
    label = "non-private" if eps is None else f"eps={eps}"
    noise = "" if eps is None else f"  sigma={res.sigma:.2f}"
    print(f"  {label:12s} AUC {res.metric().mean():.3f}{noise}")

res = ex.run_experiment(ex.ExperimentConfig.preset("logreg", T=T, repeats=2))
print(f"  {'pooled logreg':12s} AUC {res.metric().mean():.3f}  (non-private, no groups)")
