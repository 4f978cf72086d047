"""
Diagnostics computed from solver outputs.

Scaled differences V_hat = scale * (rho_hat - rho_ref) on a common grid,
field comparison metrics, and the Monte Carlo study of the sampled versus
time-integrated OU mean: with samples X(i delta), i = 1..ceil(t/delta),

    theta_hat_delta(t) = mean of the samples,   theta_hat(t) = (1/t) int_0^t X(s) ds,

and (t/delta)(theta_hat_delta(t) - theta_hat(t)) is Gaussian with a variance
that converges to t/6 + (1 - e^{-2t})/4 only along step sizes dividing t.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import lfilter

from ..core.exceptions import ConfigError
from ..core.grid_core import check_same_grid, check_same_time_grid, scaled_field, step_index
from ..models.grids import FieldGrid, Interpolation
from ..models.jko import JkoTrajectory
from ..models.study import IntegralMethod, VarianceRow
from .random_streams import substream

logger = logging.getLogger(__name__)


def scaled_difference(
    rho_hat: Union[JkoTrajectory, FieldGrid],
    rho_ref: FieldGrid,
    scale: float,
    convention: Optional[Interpolation] = None,
) -> FieldGrid:
    """
    Nodewise scale * (rho_hat - rho_ref).

    A JKO trajectory is first sampled on rho_ref's time grid with its
    interpolation convention.

    Raises:
        GridMismatch: If the spatial or temporal grids differ
    """
    if isinstance(rho_hat, JkoTrajectory):
        check_same_grid(rho_hat.grid, rho_ref.grid)
        rho_hat = rho_hat.to_field(rho_ref.time_grid, convention)
    check_same_grid(rho_hat.grid, rho_ref.grid)
    check_same_time_grid(rho_hat.time_grid, rho_ref.time_grid)
    return scaled_field(rho_ref.grid, rho_ref.time_grid, rho_hat.values - rho_ref.values, scale)


def _window(field: FieldGrid, t_min: float, t_max: Optional[float], x_max: Optional[float]) -> np.ndarray:
    t = field.time_grid.nodes
    x = field.grid.nodes
    rows = (t >= t_min - 1e-12) & (t <= (t[-1] if t_max is None else t_max) + 1e-12)
    cols = np.ones(x.size, dtype=bool) if x_max is None else np.abs(x) <= x_max + 1e-12
    return field.values[np.ix_(rows, cols)]


def relative_l2_error(
    field: FieldGrid,
    reference: FieldGrid,
    t_min: float = 0.0,
    t_max: Optional[float] = None,
    x_max: Optional[float] = None,
) -> float:
    """||field - reference|| / ||reference|| over the window t in [t_min, t_max], |x| <= x_max."""
    check_same_grid(field.grid, reference.grid)
    check_same_time_grid(field.time_grid, reference.time_grid)
    a = _window(field, t_min, t_max, x_max)
    b = _window(reference, t_min, t_max, x_max)
    norm = float(np.linalg.norm(b))
    if norm == 0.0:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(a - b)) / norm


def field_correlation(
    field: FieldGrid,
    reference: FieldGrid,
    t_min: float = 0.0,
    t_max: Optional[float] = None,
    x_max: Optional[float] = None,
) -> float:
    """Pearson correlation of two fields over the same window; 0 if either is constant."""
    check_same_grid(field.grid, reference.grid)
    check_same_time_grid(field.time_grid, reference.time_grid)
    a = _window(field, t_min, t_max, x_max).ravel()
    b = _window(reference, t_min, t_max, x_max).ravel()
    if np.std(a) == 0.0 or np.std(b) == 0.0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def prop53_limit_variance(t: float, beta: float = 1.0) -> float:
    return (t / 6.0 + 0.25 * (1.0 - math.exp(-2.0 * t))) / beta


def _segments(t: float, delta: float) -> Tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """
    Breakpoints of [0, N delta] refined by t.

    Returns (N, left ends, right ends, interval index j of each segment).
    """
    samples = step_index(t, delta, Interpolation.CEIL)
    nodes = np.arange(samples + 1) * delta
    if abs(nodes[-1] - t) <= 1e-9 * t:
        nodes[-1] = t
        breakpoints = nodes
    else:
        breakpoints = np.sort(np.append(nodes, t))
    left, right = breakpoints[:-1], breakpoints[1:]
    j = np.searchsorted(nodes, left, side="right") - 1
    return samples, left, right, j


def prop53_exact_variance(t: float, delta: float, beta: float = 1.0) -> float:
    """
    Var[(t/delta)(theta_hat_delta(t) - theta_hat(t))] for a path started at theta.

    The difference is a Wiener integral (2/beta)^{1/2} int f(s) dB_s with f
    piecewise of the form P e^{s-l} + q, so the variance is a finite sum of
    closed-form integrals.
    """
    if t <= 0 or delta <= 0:
        raise ValueError("t and delta must be positive")
    samples, left, right, j = _segments(t, delta)
    # (1/N) sum_{i>j} e^{-(i-j) delta}, the sample-mean weight at the start of interval j
    weight = np.exp(-delta) * -np.expm1(-(samples - j) * delta) / (-math.expm1(-delta)) / samples
    before = (left < t - 1e-12 * t).astype(float)
    P = weight * np.exp(left - j * delta) + before * np.exp(left - t) / t
    q = -before / t
    L = right - left
    integral = P * P * np.expm1(2 * L) / 2 + 2 * P * q * np.expm1(L) + q * q * L
    variance = (2.0 / beta) * float(np.sum(integral))
    return (t / delta) ** 2 * variance


def _scaled_gap_trapezoid(t: float, delta: float, replications: int, rng: np.random.Generator, refine: int, beta: float):
    samples = step_index(t, delta, Interpolation.CEIL)
    if abs(samples * delta - t) > 1e-9 * t:
        raise ConfigError(
            f"the trapezoid integral needs t/delta integral (t={t}, delta={delta}); use the exact method",
            t=t, delta=delta,
        )
    h = delta / refine
    a = math.exp(-h)
    sd = math.sqrt(-math.expm1(-2.0 * h) / beta)
    y = np.zeros(replications)
    sample_sum = np.zeros(replications)
    integral = np.zeros(replications)
    for _ in range(samples):
        noise = sd * rng.standard_normal((refine, replications))
        block, _ = lfilter([1.0], [1.0, -a], noise, axis=0, zi=(a * y)[None, :])
        integral += h * (0.5 * y + block[:-1].sum(axis=0) + 0.5 * block[-1])
        y = block[-1]
        sample_sum += y
    return (t / delta) * (sample_sum / samples - integral / t)


def _scaled_gap_exact(t: float, delta: float, replications: int, rng: np.random.Generator, beta: float):
    samples, left, right, _ = _segments(t, delta)
    y = np.zeros(replications)
    sample_sum = np.zeros(replications)
    integral = np.zeros(replications)
    for l, r in zip(left, right):
        L = r - l
        decay = -math.expm1(-L)
        var_y = -math.expm1(-2.0 * L) / beta
        var_i = (2.0 / beta) * (L - 2.0 * decay - 0.5 * math.expm1(-2.0 * L))
        cov = decay * decay / beta
        l11 = math.sqrt(var_y)
        l21 = cov / l11
        l22 = math.sqrt(max(var_i - l21 * l21, 0.0))
        z = rng.standard_normal((2, replications))
        area = decay * y + l21 * z[0] + l22 * z[1]
        y = (1.0 - decay) * y + l11 * z[0]
        if l < t - 1e-12 * t:
            integral += area
        # right ends that are sampling nodes i*delta
        if abs(r / delta - round(r / delta)) <= 1e-9 * max(1.0, r / delta) or r == right[-1]:
            sample_sum += y
    return (t / delta) * (sample_sum / samples - integral / t)


def _variance_row(t, delta, values: np.ndarray, method: IntegralMethod, beta: float) -> VarianceRow:
    R = values.size
    variance = float(np.var(values, ddof=1))
    return VarianceRow(
        t=t,
        delta=delta,
        samples=step_index(t, delta, Interpolation.CEIL),
        replications=R,
        variance=variance,
        std_error=variance * math.sqrt(2.0 / (R - 1)),
        exact_variance=prop53_exact_variance(t, delta, beta),
        limit_variance=prop53_limit_variance(t, beta),
        method=method,
    )


def prop53_replicate(
    t: float,
    delta: float,
    replications: int,
    seed: int,
    key: Sequence[int] = (0,),
    integral: IntegralMethod = IntegralMethod.TRAPEZOID,
    refine: int = 100,
    beta: float = 1.0,
) -> VarianceRow:
    """One variance estimate from `replications` OU paths started at theta."""
    if replications < 2:
        raise ValueError("at least two replications are needed for a variance")
    rng = substream(seed, *key)
    if integral == IntegralMethod.TRAPEZOID:
        values = _scaled_gap_trapezoid(t, delta, replications, rng, refine, beta)
    else:
        values = _scaled_gap_exact(t, delta, replications, rng, beta)
    row = _variance_row(t, delta, values, integral, beta)
    logger.info(
        f"Sampled-mean gap at t={t}, delta={delta:.6g}: variance {row.variance:.5f} "
        f"(exact {row.exact_variance:.5f}, limit {row.limit_variance:.5f})"
    )
    return row


def run_prop53(
    t: float,
    n_list: Sequence[int],
    replications: int,
    seed: int,
    integral: IntegralMethod = IntegralMethod.TRAPEZOID,
    refine: int = 100,
    beta: float = 1.0,
) -> List[VarianceRow]:
    """
    Var[n(theta_hat_delta(t) - theta_hat(t))] with delta = t/n for each n.

    Entry k of n_list uses substream (k,) of the seed.
    """
    return [
        prop53_replicate(t, t / n, replications, seed, (k,), integral, refine, beta)
        for k, n in enumerate(n_list)
    ]


def prop53_sweep(
    t: float = 1.0,
    unit: float = 1e-4,
    multipliers: Sequence[int] = tuple(range(1, 101)),
    replications: int = 0,
    seed: int = 0,
    beta: float = 1.0,
) -> List[VarianceRow]:
    """
    Variance along delta_m = m * unit.

    With replications = 0 only the closed form is evaluated (the Monte Carlo
    columns then repeat it with zero standard error); otherwise each m is also
    simulated with the exact interval sampler.
    """
    rows = []
    for k, m in enumerate(multipliers):
        delta = m * unit
        if replications:
            rows.append(prop53_replicate(t, delta, replications, seed, (k,), IntegralMethod.EXACT, beta=beta))
            continue
        exact = prop53_exact_variance(t, delta, beta)
        rows.append(VarianceRow(
            t=t, delta=delta, samples=step_index(t, delta, Interpolation.CEIL), replications=2,
            variance=exact, std_error=0.0, exact_variance=exact,
            limit_variance=prop53_limit_variance(t, beta), method=IntegralMethod.EXACT,
        ))
    return rows
