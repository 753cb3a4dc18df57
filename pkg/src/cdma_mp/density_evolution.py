"""Macroscopic recursion predicting the detectors' average behaviour.

Order parameters per iteration: signal alignment E, field variance F,
overlap M and self-overlap Q, coupled through Gaussian expectations

    M = int Dz tanh(sqrt(F) z + E),      Q = int Dz tanh^2(sqrt(F) z + E),
    E' = 1 / (sigma^2 + beta (1 - Q + Upsilon)),
    F' = [beta (1 - 2 M + Q) + sigma0^2] E'^2,

with Dz the standard normal measure.  The cross-solution constant
Upsilon = (sigma0^2 - sigma^2) / beta is the bit-error-optimal choice; with
it the recursion depends on the true noise only (E' = 1/(sigma0^2 +
beta (1 - Q))) and keeps E = F and Q = M along the whole trajectory, which
is exactly the regime the noise-blind detector realises.  Upsilon = 0
models the fixed-sigma^2 baseline.

Gaussian expectations use Gauss-Hermite quadrature with the substitution
z = sqrt(2) x mapping the e^{-x^2} weight to the standard normal.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erfc, roots_hermite

from .exceptions import ConfigurationError, DegenerateParametersError

MODES = ("optimal_upsilon", "fixed_upsilon", "original_zero_upsilon")

DEFAULT_QUADRATURE_ORDER = 384

# Alignment values beyond this are treated as the noiseless boundary.
E_CAP = 1e12


@dataclass(frozen=True)
class DEState:
    """Order parameters after ``t`` iterations."""

    E: float
    F: float
    M: float
    Q: float
    upsilon: float
    t: int

    def __post_init__(self) -> None:
        if self.F < 0:
            raise ConfigurationError("field variance F must be >= 0")
        if not (-1.0 <= self.M <= 1.0) or not (0.0 <= self.Q <= 1.0):
            raise ConfigurationError("need |M| <= 1 and Q in [0, 1]")


@dataclass(frozen=True)
class DEConfig:
    """Parameters of one density-evolution run."""

    beta: float
    sigma0_sq: float
    sigma_sq: float = 0.0
    mode: str = "optimal_upsilon"
    fixed_upsilon: float = 0.0
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER
    fixed_point_tol: float = 1e-12
    max_iters: int = 200

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ConfigurationError("beta must be > 0")
        if self.sigma0_sq < 0 or self.sigma_sq < 0:
            raise ConfigurationError("noise variances must be >= 0")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.quadrature_order < 16:
            raise ConfigurationError("quadrature_order must be >= 16")
        if self.fixed_point_tol <= 0:
            raise ConfigurationError("fixed_point_tol must be > 0")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")

    def upsilon(self) -> float:
        if self.mode == "optimal_upsilon":
            return (self.sigma0_sq - self.sigma_sq) / self.beta
        if self.mode == "fixed_upsilon":
            return self.fixed_upsilon
        return 0.0


@lru_cache(maxsize=8)
def _gh_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    # scipy's roots stay stable at large orders (numpy's hermgauss overflows
    # beyond a few hundred nodes).
    x, w = roots_hermite(order)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def gaussian_expectation(
    f: Callable[[np.ndarray], np.ndarray],
    mean_shift: float,
    variance: float,
    order: int = DEFAULT_QUADRATURE_ORDER,
) -> float:
    """int Dz f(sqrt(variance) z + mean_shift) by Gauss-Hermite quadrature."""
    if variance < 0:
        raise DegenerateParametersError("variance must be >= 0")
    z, w = _gh_nodes(order)
    return float(w @ f(np.sqrt(variance) * z + mean_shift))


def initial_state(config: DEConfig) -> DEState:
    """E = F = 0, hence M = Q = 0: the detectors' zero-magnetization start."""
    return DEState(E=0.0, F=0.0, M=0.0, Q=0.0, upsilon=config.upsilon(), t=0)


def de_step(state: DEState, config: DEConfig) -> DEState:
    """Advance the recursion by one iteration."""
    ups = config.upsilon()
    if config.mode == "optimal_upsilon":
        # Algebraically identical to sigma_sq + beta (1 - Q + ups); this form
        # is exactly independent of the assumed noise.
        denom = config.sigma0_sq + config.beta * (1.0 - state.Q)
    else:
        denom = config.sigma_sq + config.beta * (1.0 - state.Q + ups)
    if denom <= 0:
        raise DegenerateParametersError(f"alignment denominator {denom} <= 0")
    e_next = 1.0 / denom
    if e_next > E_CAP:
        e_next = E_CAP
    f_next = (config.beta * (1.0 - 2.0 * state.M + state.Q) + config.sigma0_sq) * e_next**2
    order = config.quadrature_order
    m_next = gaussian_expectation(np.tanh, e_next, f_next, order)
    q_next = gaussian_expectation(lambda u: np.square(np.tanh(u)), e_next, f_next, order)
    # Positive-weight quadrature of bounded integrands; trim roundoff spill.
    m_next = min(1.0, max(-1.0, m_next))
    q_next = min(1.0, max(0.0, q_next))
    return DEState(E=e_next, F=f_next, M=m_next, Q=q_next, upsilon=ups, t=state.t + 1)


@dataclass(frozen=True)
class FixedPointResult:
    state: DEState
    converged: bool
    boundary: bool  # alignment hit the noiseless cap
    trajectory: tuple[DEState, ...]


def fixed_point(config: DEConfig, init: DEState | None = None) -> FixedPointResult:
    """Iterate de_step to stationarity (or max_iters; reported, not fatal)."""
    state = initial_state(config) if init is None else init
    trajectory = [state]
    converged = False
    boundary = False
    for _ in range(config.max_iters):
        nxt = de_step(state, config)
        trajectory.append(nxt)
        if nxt.E >= E_CAP:
            boundary = True
        delta = max(
            abs(nxt.E - state.E), abs(nxt.F - state.F), abs(nxt.M - state.M), abs(nxt.Q - state.Q)
        )
        state = nxt
        if delta < config.fixed_point_tol:
            converged = True
            break
    return FixedPointResult(
        state=state, converged=converged, boundary=boundary, trajectory=tuple(trajectory)
    )


def trajectory(config: DEConfig, iters: int, init: DEState | None = None) -> list[DEState]:
    """First ``iters`` states after the start (t = 1 .. iters)."""
    if iters < 1:
        raise ConfigurationError("iters must be >= 1")
    state = initial_state(config) if init is None else init
    states = []
    for _ in range(iters):
        state = de_step(state, config)
        states.append(state)
    return states


def ber_theory(state: DEState) -> float:
    """Predicted bit error rate: the lower normal tail beyond -E/sqrt(F)."""
    if state.F > 0:
        # Complementary error function keeps full accuracy in the far tail.
        return float(0.5 * erfc(state.E / np.sqrt(2.0 * state.F)))
    if state.E == 0 and state.F == 0:
        return 0.5
    raise DegenerateParametersError("F <= 0 with E != 0 has no predicted error rate")


def trajectory_rows(states: Iterable[DEState]) -> list[tuple]:
    """Rows (t, E, F, M, Q, Upsilon, P_b) for CSV export."""
    return [(s.t, s.E, s.F, s.M, s.Q, s.upsilon, ber_theory(s)) for s in states]


def write_trajectory_csv(path: str, states: Sequence[DEState]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "E", "F", "M", "Q", "Upsilon", "P_b"])
        for row in trajectory_rows(states):
            writer.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


def matching_config(
    beta: float,
    sigma0_sq: float,
    sigma_sq: float | None = None,
    **overrides,
) -> DEConfig:
    """Optimal-Upsilon config for given channel parameters (the prediction
    matching the noise-blind detector)."""
    return DEConfig(
        beta=beta,
        sigma0_sq=sigma0_sq,
        sigma_sq=sigma0_sq if sigma_sq is None else sigma_sq,
        mode="optimal_upsilon",
        **overrides,
    )


__all__ = [
    "DEState",
    "DEConfig",
    "FixedPointResult",
    "MODES",
    "DEFAULT_QUADRATURE_ORDER",
    "E_CAP",
    "gaussian_expectation",
    "initial_state",
    "de_step",
    "fixed_point",
    "trajectory",
    "ber_theory",
    "trajectory_rows",
    "write_trajectory_csv",
    "matching_config",
]
