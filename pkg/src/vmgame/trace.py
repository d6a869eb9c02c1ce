"""Per-round gap traces: the primary experiment output."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RegretTrace:
    """Per-round sub-optimality gaps plus run metadata.

    cum_regret is always the exact prefix sum of gaps.
    """

    gaps: list = field(default_factory=list)
    wallclock_ms: list = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    final_residual: float = float("nan")
    meta: dict = field(default_factory=dict)

    def append(self, gap, wallclock_ms=0.0):
        self.gaps.append(float(gap))
        self.wallclock_ms.append(float(wallclock_ms))

    @property
    def cum_regret(self):
        return np.cumsum(np.asarray(self.gaps, dtype=float))

    def __len__(self):
        return len(self.gaps)

    def min_gap(self):
        return float(min(self.gaps)) if self.gaps else float("nan")
