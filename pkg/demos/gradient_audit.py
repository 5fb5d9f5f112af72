"""Audit every hand-derived gradient against central differences.

Each layer's backward pass, the loss gradient, and sampled end-to-end
network gradients are compared with finite differences in float64.
"""

import time

from flynet.gradcheck import run_suite
from flynet.tensor import Precision

start = time.perf_counter()
results = run_suite(seeds=(0, 1, 2), precision=Precision.DOUBLE)
elapsed = time.perf_counter() - start

for r in results:
    status = "pass" if r.passed else "FAIL"
    print(f"{r.name:<22} max_rel_err={r.max_rel_err:.3e} "
          f"threshold={r.threshold:.0e} {status}")

failed = [r.name for r in results if not r.passed]
print(f"\n{len(results)} checks in {elapsed:.1f}s: "
      + ("all passed" if not failed else f"FAILED {failed}"))
