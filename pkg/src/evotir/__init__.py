"""Evolutionary search over straight-line tensor programs.

A small SSA tensor dialect with a textual format, an interpreter with a
deterministic cost model, a patch-based genome (copy and delete edits
with tensor-resize repair), and an NSGA-II loop that trades execution
cost against model error on a two-layer classifier training workload.
"""

__version__ = "0.1.0"
