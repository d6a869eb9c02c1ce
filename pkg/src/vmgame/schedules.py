"""Regularization-coefficient schedules for the model update.

Each game family has its own closed-form schedule growing like sqrt(T);
constant and zero schedules are provided for ablations.
"""

from __future__ import annotations

import math


def matrix_alpha(T, d, delta):
    """sqrt(T) schedule for the matrix-game model update."""
    num = math.log(4.0 * T / delta) + d * math.log(max(d * T, 2))
    den = d * math.log(1.0 + (T / d) ** 1.5)
    return math.sqrt(T * num / den)


def markov_alpha(T, H, d, num_states, num_players, delta):
    """sqrt(T/H) schedule for the finite-horizon Markov-game model update."""
    num = math.log(H * num_players / delta) + d * math.log(max(d * num_states * T, 2))
    den = H * d * math.log(1.0 + T ** 1.5 * H ** 2 / math.sqrt(d))
    return math.sqrt(T * num / den)


def infinite_alpha(T, gamma, d, num_states, num_players, delta):
    """Discounted-setting schedule; gamma is clipped away from 0 to keep the
    prefactor finite in the degenerate one-shot case."""
    g = max(gamma, 1e-3)
    num = math.log(num_players / delta) + d * math.log(max(d * num_states * T, 2))
    den = d * math.log(1.0 + T ** 1.5 / ((1.0 - g) ** 2 * math.sqrt(d)))
    return (1.0 - g) ** 1.5 / g * math.sqrt(T * num / den)


def resolve_alpha(schedule, paper_formula):
    """Resolve an alpha schedule spec to a number.

    schedule is ('paper_formula', delta), ('constant', c) or ('zero',);
    paper_formula is a callable delta -> alpha.
    """
    kind = schedule[0]
    if kind == "paper_formula":
        return float(paper_formula(schedule[1]))
    if kind == "constant":
        return float(schedule[1])
    if kind == "zero":
        return 0.0
    raise ValueError(f"unknown alpha schedule {schedule!r}")
