"""Every backward pass in this package is hand-written, so every one is
checked against central finite differences at float64.

This runs a reduced version of the release gate (5 instances per block
instead of 20) and prints the worst relative error per block.  The full
suite is `tinydet gradcheck --out DIR` or the slow acceptance test.

Run:  python3 demos/02_gradient_oracles.py
"""

import time

from tinydet.verify import gradcheck_suite

t0 = time.time()
entries = gradcheck_suite(instances=5)
print(f"{'block':<14} {'worst rel err':>14} {'tolerance':>10}  verdict")
print("-" * 48)
for e in entries:
    print(
        f"{e.name:<14} {e.report.max_rel_err:>14.3e} {e.tolerance:>10.0e}"
        f"  {'pass' if e.passed else 'FAIL'}"
    )
print(f"\n{time.time() - t0:.1f}s.  A broken gradient shows up around 1e-2 here;")
print("a healthy one sits below 1e-6 (1e-5 where batch statistics couple probes).")
