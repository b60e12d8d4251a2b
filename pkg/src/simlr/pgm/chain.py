"""Forward inference of future policy changes.

Each future week draws willingness ``O`` from the weeks since the last
change ``W``, urgency ``U`` from the case features, and a policy change
``CP`` from ``(O, U)``. ``W`` resets to 0 after a change and otherwise grows
by one, so it is the only state carried between weeks.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from simlr.pgm.cpt import (
    TRINARY,
    CptSet,
    cp_distribution,
    ct_distribution,
    default_cpts,
    load_cpts,
    willingness_distribution,
)
from simlr.pgm.nn_cpd import NnCpd, urgency_distribution, urgency_features
from simlr.sir_core import SirState, new_infections

# W beyond this lands in the last bin anyway; capping keeps the state space finite
_W_CAP = 10_000


@dataclass(frozen=True)
class PgmConfig:
    """Tables for CT, O and CP plus the urgency network."""

    cpts: CptSet
    nn: NnCpd | None = None

    @classmethod
    def load(cls, cpt_path: str | Path | None = None, nn_path: str | Path | None = None) -> "PgmConfig":
        cpts = default_cpts() if cpt_path is None else load_cpts(cpt_path)
        nn = None if nn_path is None else NnCpd.load(nn_path)
        return cls(cpts, nn)

    def with_nn(self, nn: NnCpd) -> "PgmConfig":
        return replace(self, nn=nn)

    def ct(self, lags: Sequence[int]) -> np.ndarray:
        return ct_distribution(lags, self.cpts.ct)

    def require_nn(self) -> NnCpd:
        if self.nn is None:
            raise ValueError("this operation needs a trained urgency network (PgmConfig.nn)")
        return self.nn


def _step_cp(w: int, u_dist: np.ndarray, cpts: CptSet) -> np.ndarray:
    """P(CP) for one week, marginalizing O | W and the given U distribution."""
    o_dist = willingness_distribution(w, cpts.o)
    out = np.zeros(3)
    for o, po in zip(cpts.o.child_states, o_dist):
        if po == 0.0:
            continue
        for u, pu in zip(TRINARY, u_dist):
            if pu == 0.0:
                continue
            out += po * pu * cp_distribution(o, u, cpts.cp)
    return out


def _next_w(w: int, cp: int) -> int:
    return 0 if cp != 0 else min(w + 1, _W_CAP)


def policy_path_distribution(
    weeks_since_change: int, urgency: Sequence[np.ndarray], cpts: CptSet
) -> dict[tuple[int, ...], float]:
    """Joint distribution of the next ``len(urgency)`` weekly policy changes.

    ``urgency[k]`` is P(U) in the week whose features drive change ``k``.
    Keys are CP paths; zero-probability paths are omitted.
    """
    frontier: dict[tuple[tuple[int, ...], int], float] = {((), int(weeks_since_change)): 1.0}
    for u_dist in urgency:
        nxt: dict[tuple[tuple[int, ...], int], float] = defaultdict(float)
        for (path, w), p in frontier.items():
            step = _step_cp(w, np.asarray(u_dist, dtype=float), cpts)
            for cp, pc in zip(TRINARY, step):
                if pc > 0.0:
                    nxt[(path + (cp,), _next_w(w, cp))] += p * pc
        frontier = dict(nxt)
    return {path: p for (path, _), p in frontier.items()}


def policy_chain(
    weeks_since_change: int, urgency: Sequence[np.ndarray], cpts: CptSet
) -> list[np.ndarray]:
    """Per-week marginal P(CP) by propagating the distribution over W."""
    w_dist: dict[int, float] = {int(weeks_since_change): 1.0}
    marginals = []
    for u_dist in urgency:
        total = np.zeros(3)
        nxt: dict[int, float] = defaultdict(float)
        for w, pw in w_dist.items():
            step = _step_cp(w, np.asarray(u_dist, dtype=float), cpts)
            total += pw * step
            for cp, pc in zip(TRINARY, step):
                if pc > 0.0:
                    nxt[_next_w(w, cp)] += pw * pc
        marginals.append(total)
        w_dist = dict(nxt)
    return marginals


def urgency_sequence(
    weekly_cases: Sequence[float], population: float, net: NnCpd, steps: int
) -> list[np.ndarray]:
    """P(U) for the last ``steps`` weeks of ``weekly_cases``.

    ``weekly_cases`` must hold at least ``steps + 1`` values so the change
    feature is defined for each of those weeks.
    """
    cases = list(weekly_cases)
    if len(cases) < steps + 1:
        raise ValueError(f"need {steps + 1} weekly counts for {steps} urgency steps")
    out = []
    for k in range(len(cases) - steps, len(cases)):
        feats = urgency_features(cases[: k + 1], population)
        out.append(urgency_distribution(feats, net))
    return out


def forecast_policy_chain(
    history,
    sir_history: Sequence[SirState],
    pgm: PgmConfig,
    horizon: int,
    projected_cases: Sequence[float] | None = None,
) -> list[np.ndarray]:
    """P(CP) for each of the next ``horizon`` weeks.

    ``history`` is the policy timeline up to the current week (only its last
    ``weeks_since_change`` is used) and ``sir_history`` the SIR states at the
    week boundaries, so consecutive differences of S are weekly new
    infections. The change in week ``t + k`` is driven by urgency in week
    ``t + k - 1``; for ``k >= 2`` that week lies in the future and its
    features come from ``projected_cases`` (default: the last observed
    weekly count carried forward).
    """
    if not 1 <= horizon <= 4:
        raise ValueError(f"horizon must be in 1..4, got {horizon}")
    if len(sir_history) < 3:
        raise ValueError("need SIR states for at least two observed weeks")
    weekly = [new_infections(a, b) for a, b in zip(sir_history[:-1], sir_history[1:])]
    return chain_from_cases(
        int(history.weeks_since_change[-1]),
        weekly,
        sir_history[-1].n,
        pgm,
        horizon,
        projected_cases,
    )


def chain_from_cases(
    weeks_since_change: int,
    weekly_cases: Sequence[float],
    population: float,
    pgm: PgmConfig,
    horizon: int,
    projected_cases: Sequence[float] | None = None,
) -> list[np.ndarray]:
    """:func:`forecast_policy_chain` on plain weekly counts."""
    future = list(projected_cases) if projected_cases is not None else []
    if len(future) < horizon - 1:
        future += [weekly_cases[-1]] * (horizon - 1 - len(future))
    cases = list(weekly_cases) + future[: horizon - 1]
    urgency = urgency_sequence(cases, population, pgm.require_nn(), horizon)
    return policy_chain(weeks_since_change, urgency, pgm.cpts)
