"""Discrete-time SIR state and simulation.

One call to :func:`step` advances the compartments by one time step of the
difference equations

    S' = S - beta * S * I / N
    I' = I + beta * S * I / N - gamma * I
    R' = R + gamma * I

The step length is whatever unit the rates were fitted at. Parameters fitted
by :mod:`simlr.param_fit` are per-day rates, so forecasting runs seven steps
per week.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

CONSERVATION_RTOL = 1e-6


@dataclass(frozen=True)
class SirState:
    """Compartment counts at one time point (real-valued persons)."""

    s: float
    i: float
    r: float
    n: float

    def __post_init__(self) -> None:
        for name in ("s", "i", "r", "n"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"SirState.{name} is not finite: {value!r}")
        if self.n <= 0:
            raise ValueError(f"population must be positive, got {self.n}")
        if self.s < 0 or self.i < 0 or self.r < 0:
            raise ValueError(f"negative compartment in {self}")
        if abs(self.s + self.i + self.r - self.n) > CONSERVATION_RTOL * self.n:
            raise ValueError(
                f"s + i + r = {self.s + self.i + self.r} does not match n = {self.n}"
            )

    @classmethod
    def initial(cls, n: float, infected: float = 0.0, removed: float = 0.0) -> "SirState":
        return cls(s=n - infected - removed, i=infected, r=removed, n=n)

    def scaled(self, factor: float) -> "SirState":
        return SirState(self.s * factor, self.i * factor, self.r * factor, self.n * factor)


@dataclass(frozen=True)
class RateParams:
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and math.isfinite(self.gamma)):
            raise ValueError(f"non-finite rates: beta={self.beta}, gamma={self.gamma}")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError(f"rates must be non-negative: beta={self.beta}, gamma={self.gamma}")


def step(state: SirState, params: RateParams) -> SirState:
    """Advance ``state`` by one step.

    The infection flow is clamped to ``S`` and the recovery flow to ``I`` so
    that large fitted rates cannot drive a compartment negative. Inside those
    bounds the result is exactly the unconstrained difference equation.
    """
    s, i, r, n = state.s, state.i, state.r, state.n
    infections = params.beta * s * i / n
    if infections > s:
        infections = s
    recoveries = params.gamma * i
    if recoveries > i:
        recoveries = i
    s_next = s - infections
    i_next = i + infections - recoveries
    r_next = r + recoveries
    return SirState(s_next, max(i_next, 0.0), r_next, n)


def simulate(initial: SirState, param_sequence: Sequence[RateParams]) -> list[SirState]:
    """Apply :func:`step` once per entry of ``param_sequence``.

    The returned list excludes ``initial``; ``result[k]`` is the state after
    ``k + 1`` steps.
    """
    if len(param_sequence) == 0:
        raise ValueError("param_sequence must be non-empty")
    states = []
    state = initial
    for params in param_sequence:
        state = step(state, params)
        states.append(state)
    return states


def new_infections(prev: SirState, next: SirState) -> float:
    """Persons who left S between two states, floored at zero."""
    if prev.n != next.n:
        raise ValueError(f"population changed between states: {prev.n} -> {next.n}")
    return max(prev.s - next.s, 0.0)
