"""Replicated single-variable landscape behind the two-state message structure.

The marginalized posterior of one user reduces to a saddle-point problem
over the scalar landscape

    L(x; h, g) = -(x - h)^2 / (2 g) + ln cosh(x),

with external field h and rescaled cross-replica coupling g > 0.  Its
maxima satisfy x = h + g tanh(x).  For g <= 1 the landscape is concave and
has a single peak; for g > 1 and small |h| it carries an almost symmetric
pair of peaks near +-x0 (x0 the positive zero-field solution of
x = g tanh x), whose probability weights follow a logistic law in
n * m * h with m = tanh(x0) = x0 / g.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError

# Peaks closer to the origin than this are treated as the merged
# single-peak case at the g = 1 pitchfork.
MERGE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SaddleProblem:
    """One replicated single-user landscape: field h, coupling g, replicas n."""

    field: float
    coupling: float
    replica_count: float = 1.0

    def __post_init__(self) -> None:
        if self.coupling <= 0:
            raise ConfigurationError("coupling must be > 0")


@dataclass(frozen=True)
class PeakSet:
    """Maxima of the landscape with their weights.

    positions holds one entry (single regime) or the pair (x_minus, x_plus);
    weights match positions and sum to one; magnetization is tanh of the
    zero-field peak.  perturbative_positions reports the small-field
    shifted-pair approximation for comparison (double regime only).
    """

    positions: tuple[float, ...]
    weights: tuple[float, ...]
    magnetization: float
    regime: str  # "single" | "double"
    perturbative_positions: tuple[float, float] | None = None


def _lncosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x)) - np.log(2.0)


def landscape(x, problem: SaddleProblem):
    """L(x; h, g); ln cosh evaluated overflow-safely, vectorized in x."""
    x = np.asarray(x, dtype=np.float64)
    h, g = problem.field, problem.coupling
    value = -((x - h) ** 2) / (2.0 * g) + _lncosh(x)
    return value if value.ndim else float(value)


def landscape_slope(x, problem: SaddleProblem):
    """dL/dx = -(x - h)/g + tanh(x)."""
    x = np.asarray(x, dtype=np.float64)
    value = -(x - problem.field) / problem.coupling + np.tanh(x)
    return value if value.ndim else float(value)


def _stationarity(x: float, h: float, g: float) -> tuple[float, float]:
    # f(x) = x - h - g tanh x; roots are the stationary points of L.
    th = np.tanh(x)
    return x - h - g * th, 1.0 - g * (1.0 - th * th)


def _newton_bisect(h: float, g: float, lo: float, hi: float) -> float:
    """Root of x - h - g tanh x in [lo, hi] by safeguarded Newton.

    The bracket is maintained throughout; Newton steps that leave it (or
    stall) fall back to bisection.  Iterates to machine precision.
    """
    flo, _ = _stationarity(lo, h, g)
    fhi, _ = _stationarity(hi, h, g)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo > 0 or fhi < 0:
        raise ConfigurationError(f"[{lo}, {hi}] does not bracket a root")
    x = 0.5 * (lo + hi)
    step = abs(hi - lo)
    f, df = _stationarity(x, h, g)
    for _ in range(200):
        newton_ok = df != 0 and lo <= x - f / df <= hi and abs(2.0 * f) < abs(step * df)
        if newton_ok:
            step = f / df
            x_new = x - step
        else:
            step = 0.5 * (hi - lo)
            x_new = lo + step
        if x_new == x or abs(step) < 4e-16 * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
        f, df = _stationarity(x, h, g)
        if f == 0.0:
            break
        if f < 0:
            lo = x
        else:
            hi = x
    return x


def zero_field_peak(coupling: float) -> float:
    """Positive solution x0 of x = g tanh x (0 for g <= 1)."""
    if coupling <= 0:
        raise ConfigurationError("coupling must be > 0")
    if coupling <= 1.0:
        return 0.0
    # Maxima lie where |x| > arccosh(sqrt(g)); bracket the right one there.
    xc = np.arccosh(np.sqrt(coupling))
    return _newton_bisect(0.0, coupling, xc, coupling + 1.0)


def peak_weights(problem: SaddleProblem, magnetization: float) -> tuple[float, float]:
    """Weights (a_plus, a_minus) of the shifted pair, as printed:

        a_+- = exp(-+ n m h) / (exp(n m h) + exp(-n m h)),

    evaluated in logistic form for overflow safety.  Note a_plus carries
    the decaying exponential under positive field.
    """
    nmh = problem.replica_count * magnetization * problem.field
    a_plus = float(expit(-2.0 * nmh))
    return a_plus, 1.0 - a_plus


def find_peaks(problem: SaddleProblem) -> PeakSet:
    """Locate and classify the landscape maxima.

    Roots of the stationarity equation always exist; for g > 1 the double
    regime is detected from the sign of f at the inflection points
    +-arccosh(sqrt(g)), and near the pitchfork (x0 below the merge
    tolerance) the pair is reported as a single peak.
    """
    h, g = problem.field, problem.coupling
    x0 = zero_field_peak(g)
    m = float(np.tanh(x0))
    span = g + abs(h) + 1.0  # |root| <= |h| + g since |tanh| <= 1

    double = False
    if g > 1.0 and x0 >= MERGE_TOLERANCE:
        xc = np.arccosh(np.sqrt(g))
        f_left, _ = _stationarity(-xc, h, g)
        f_right, _ = _stationarity(xc, h, g)
        double = f_left >= 0.0 >= f_right

    if double:
        x_minus = _newton_bisect(h, g, h - span, -xc)
        x_plus = _newton_bisect(h, g, xc, h + span)
        a_plus, a_minus = peak_weights(problem, m)
        shift = g * h / (g + x0 * x0 - g * g)
        return PeakSet(
            positions=(x_minus, x_plus),
            weights=(a_minus, a_plus),
            magnetization=m,
            regime="double",
            perturbative_positions=(-x0 + shift, x0 + shift),
        )
    x_star = _newton_bisect(h, g, h - span, h + span)
    return PeakSet(
        positions=(x_star,),
        weights=(1.0,),
        magnetization=m,
        regime="single",
        perturbative_positions=None,
    )


def scan_regimes(
    coupling_values: Sequence[float],
    field_values: Sequence[float],
    replica_count: float = 1.0,
) -> list[tuple[float, float, str, float, float, float]]:
    """Grid classification; rows (g, h, regime, x0, m, a_plus)."""
    if len(coupling_values) == 0 or len(field_values) == 0:
        raise ConfigurationError("scan grids must be non-empty")
    rows = []
    for g in coupling_values:
        x0 = zero_field_peak(float(g))
        m = float(np.tanh(x0))
        for h in field_values:
            problem = SaddleProblem(field=float(h), coupling=float(g), replica_count=replica_count)
            peaks = find_peaks(problem)
            a_plus, _ = peak_weights(problem, m)
            rows.append((float(g), float(h), peaks.regime, x0, m, a_plus))
    return rows


def write_regime_csv(path: str, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["g", "h", "regime", "x0", "m", "a_plus"])
        for g, h, regime, x0, m, a_plus in rows:
            writer.writerow(
                [f"{g:.17g}", f"{h:.17g}", regime, f"{x0:.17g}", f"{m:.17g}", f"{a_plus:.17g}"]
            )
