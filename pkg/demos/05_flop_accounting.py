"""Exact MAC accounting, no estimators.

Two claims worth seeing as integers: (1) the attention block's separable
branch set is cheaper than the same block with an extra 21-tap branch
pair, and (2) the full detector variant costs at most 1.3x the baseline --
in fact its separable branches undercut the dense 3x3 conv they replace.

Run:  python3 demos/05_flop_accounting.py
"""

import dataclasses

from tinydet.detector import ABLATION_ROWS, DetectorConfig, model_flops
from tinydet.msfa import DEFAULT_BRANCH_TAPS, msfa_flops

c, h, w = 64, 32, 32
default = msfa_flops(c, h, w)
enlarged = msfa_flops(c, h, w, DEFAULT_BRANCH_TAPS + (21,))
print(f"attention block at {c}x{h}x{w}:")
print(f"  default branches {DEFAULT_BRANCH_TAPS}: {default:>12,} MACs")
print(f"  + one 21-tap pair:          {enlarged:>12,} MACs  (+{enlarged - default:,})\n")

cfg = DetectorConfig()
base = None
print(f"detector variants at input {cfg.input_size}, width {cfg.width}:")
for name, toggles in ABLATION_ROWS:
    macs = model_flops(dataclasses.replace(cfg, **toggles))
    base = base or macs
    print(f"  {name:<16} {macs:>12,} MACs  ({macs / base:.3f}x baseline)")
