"""
JKO proximal steps by flux descent, and the outer JKO iteration.

One proximal step minimizes 1/2 W2^2(rho, rho_o) + delta F(rho). The inner
loop evaluates the first-order residual

    alpha(y) = int (y - x) p(x, y) dx + delta (grad Psi(y) rho_s(y) + beta^-1 grad rho_s(y))

with p the optimal coupling of rho_o and the candidate rho_s, and pushes the
candidate along xi = -alpha/||alpha||_2 until ||alpha||_1 < kappa. Node values
after a push solve an implicit interpolation equation, handled by red-black
Gauss-Seidel sweeps with a nearest-node pullback as fallback.
"""

import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..config.settings import get_settings
from ..models.estimates import EstimatorTrajectory, SchemeTag, ThetaEstimate
from ..models.grids import DensityGrid, Grid1D
from ..models.jko import JkoConfig, JkoTrajectory, StepDiagnostics, StepResult
from ..models.transport import BandPolicy, CouplingSolver, QuantileMethod
from .exceptions import AllMassLost, BandInfeasible, InnerStall, TrajectoryTooShort
from .grid_core import check_same_grid, entropy, potential_energy, step_index
from .potential import DriftPotential, FrozenPotential, ParametricPotential, estimated_drift
from .transport1d import banded_coupling, coupling_drift_field, monotone_drift_values, w2_quantile

logger = logging.getLogger(__name__)

StepCallback = Callable[[StepDiagnostics], None]


def free_energy_under(drift: DriftPotential, rho: DensityGrid, beta: float) -> float:
    """F(rho) = int Psi rho - S(rho)/beta for an x-only drift potential; beta = inf drops entropy."""
    energy = potential_energy(rho, drift.psi_on(rho.grid))
    if np.isinf(beta):
        return energy
    return energy - entropy(rho) / beta


def _band_for(need: int, band: BandPolicy, intervals: int) -> int:
    width = band.width
    if need <= width:
        return width
    if not band.auto_widen:
        raise BandInfeasible(f"monotone plan needs band {need}, band is {width}", band=width, required=need)
    while width < need:
        width = min(max(2 * width, 1), intervals)
    return width


def _alpha_values(
    rho_o: np.ndarray,
    rho_s: np.ndarray,
    gradient: np.ndarray,
    grid: Grid1D,
    delta: float,
    inverse_temperature: float,
    band: BandPolicy,
) -> Tuple[np.ndarray, int]:
    h = grid.h
    if band.solver == CouplingSolver.MONOTONE:
        transport, need = monotone_drift_values(rho_o, rho_s, h)
        used = _band_for(need, band, grid.intervals)
    else:
        coupling = banded_coupling(
            DensityGrid(grid=grid, values=rho_o), DensityGrid(grid=grid, values=rho_s),
            w=band.width, solver=band.solver, auto_widen=band.auto_widen,
        )
        transport, used = coupling_drift_field(coupling), coupling.band

    alpha = np.zeros_like(rho_s)
    diffusion = (rho_s[2:] - rho_s[:-2]) / (2.0 * h)
    alpha[1:-1] = transport[1:-1] + delta * (gradient[1:-1] * rho_s[1:-1] + inverse_temperature * diffusion)
    return alpha, used


def alpha_field(
    rho_o: DensityGrid,
    rho_s: DensityGrid,
    drift: DriftPotential,
    delta: float,
    beta: float,
    band: Optional[BandPolicy] = None,
) -> np.ndarray:
    """
    First-order residual alpha of the proximal step at every node.

    Args:
        rho_o: Previous outer iterate
        rho_s: Candidate density
        drift: Drift potential of the step
        delta: JKO time step
        beta: Inverse temperature (math.inf drops the diffusion term)
        band: Coupling band policy

    Returns:
        alpha at the nodes, zero at both boundary nodes

    Raises:
        BandInfeasible: If the coupling does not fit the band policy
        GridMismatch: If the densities live on different grids
    """
    check_same_grid(rho_o.grid, rho_s.grid)
    inverse_temperature = 0.0 if np.isinf(beta) else 1.0 / beta
    alpha, _ = _alpha_values(
        rho_o.values, rho_s.values, drift.gradient_on(rho_s.grid), rho_s.grid,
        delta, inverse_temperature, band or BandPolicy(),
    )
    return alpha


def _renormalized(values: np.ndarray, h: float) -> np.ndarray:
    out = np.where(values > 0.0, values, 0.0)
    out[0] = out[-1] = 0.0
    mass = h * np.sum(out)
    if not mass > 0 or not np.isfinite(mass):
        raise AllMassLost("inner iterate lost all mass", mass=float(mass))
    return out / mass


def _gauss_seidel(r: np.ndarray, shift: np.ndarray, h: float, tol: float, max_sweeps: int) -> Optional[np.ndarray]:
    """
    Solve u_j = r_j - shift_j D_j(u) for interior j with red-black sweeps.

    D_j is the central difference, one-sided inward at j = 1 and j = J-1.
    Returns None if the sweeps do not settle.
    """
    size = r.size
    J = size - 1
    u = r.copy()
    # explicit first guess from the candidate itself
    u[1:-1] = r[1:-1] - shift[1:-1] * (r[2:] - r[:-2]) / (2.0 * h)
    u[0] = u[-1] = 0.0
    interior = np.arange(2, J - 1)
    colors = [(parity, interior[interior % 2 == parity]) for parity in (1, 0)]
    for _ in range(max_sweeps):
        previous = u.copy()
        for parity, inner in colors:
            u[inner] = r[inner] - shift[inner] * (u[inner + 1] - u[inner - 1]) / (2.0 * h)
            if parity == 1:
                s = shift[1] / h
                u[1] = (r[1] - s * u[2]) / (1.0 - s)
            if (J - 1) % 2 == parity:
                s = shift[J - 1] / h
                u[J - 1] = (r[J - 1] + s * u[J - 2]) / (1.0 + s)
        if not np.all(np.isfinite(u)):
            return None
        if np.max(np.abs(u - previous)) < tol:
            return u
    return None


def _pullback(r: np.ndarray, moved: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Nearest-node semi-Lagrangian fallback: u_j = r_k with moved_k closest to y_j."""
    order = np.argsort(moved, kind="stable")
    sorted_moved = moved[order]
    idx = np.clip(np.searchsorted(sorted_moved, nodes), 1, moved.size - 1)
    left, right = sorted_moved[idx - 1], sorted_moved[idx]
    nearest = np.where(nodes - left <= right - nodes, idx - 1, idx)
    return r[order[nearest]]


def _push_forward(rho_s: np.ndarray, xi: np.ndarray, step: float, grid: Grid1D, tol: float, max_sweeps: int):
    """One inner update of the node values; returns (values, used_fallback)."""
    h = grid.h
    dxi = np.zeros_like(xi)
    dxi[1:-1] = xi[2:] - xi[:-2]
    while True:
        stretch = 1.0 + step * dxi / (2.0 * h)
        if np.all(stretch[1:-1] > 0.0):
            break
        step *= 0.5
        logger.debug(f"Folded push-forward, halving inner step to {step:.3e}")

    r = np.zeros_like(rho_s)
    r[1:-1] = rho_s[1:-1] / stretch[1:-1]
    shift = step * xi
    values = _gauss_seidel(r, shift, h, tol, max_sweeps)
    if values is not None:
        return _renormalized(values, h), False
    logger.warning("Gauss-Seidel interpolation did not settle, using nearest-node pullback")
    return _renormalized(_pullback(r, grid.nodes + shift, grid.nodes), h), True


def jko_step(rho_o: DensityGrid, drift: DriftPotential, cfg: JkoConfig) -> StepResult:
    """
    One proximal step by flux descent.

    Args:
        rho_o: Previous outer iterate
        drift: Drift potential of this step
        cfg: JKO configuration (delta, beta, inner loop, band policy)

    Returns:
        StepResult with the new density and inner-loop diagnostics

    Raises:
        InnerStall: If strict_inner is set and the cap is hit with ||alpha||_1 > 10 kappa
        AllMassLost: If an inner iterate has no mass left
        GridMismatch: If rho_o does not live on cfg.grid
    """
    check_same_grid(rho_o.grid, cfg.grid)
    grid, inner = cfg.grid, cfg.inner
    h = grid.h
    gradient = drift.gradient_on(grid)
    rho_prev_outer = rho_o.values
    current = rho_prev_outer.copy()
    previous = current
    fallbacks = 0
    band_used = 0

    l = 0
    while True:
        if inner.nesterov and l > 0:
            momentum = (l - 1.0) / (l + 2.0)
            candidate = _renormalized(current + momentum * (current - previous), h)
        else:
            candidate = current

        alpha, band_used = _alpha_values(
            rho_prev_outer, candidate, gradient, grid, cfg.delta, cfg.inverse_temperature, cfg.band
        )
        alpha_l1 = float(h * np.sum(np.abs(alpha)))
        if alpha_l1 < inner.kappa:
            break
        if l >= inner.l_max:
            break

        alpha_l2 = float(np.sqrt(h * np.sum(alpha * alpha)))
        xi = -alpha / alpha_l2
        pushed, used_fallback = _push_forward(
            candidate, xi, inner.step_size(l + 1), grid, inner.gs_tol, inner.gs_max_sweeps
        )
        fallbacks += int(used_fallback)
        previous, current = current, pushed
        l += 1

    stalled = alpha_l1 > 10.0 * inner.kappa and l >= inner.l_max
    if stalled:
        message = f"Flux descent hit l_max={inner.l_max} with ||alpha||_1={alpha_l1:.3e}"
        if inner.strict_inner:
            raise InnerStall(message, iterations=l, alpha_l1=alpha_l1)
        logger.warning(message)
    logger.debug(f"JKO step finished after {l} inner iterations (||alpha||_1={alpha_l1:.3e})")

    return StepResult(
        density=DensityGrid(grid=grid, values=candidate),
        inner_iterations=l,
        alpha_l1=alpha_l1,
        band_used=band_used,
        fallbacks=fallbacks,
        stalled=stalled,
    )


def _iterate(
    rho0: DensityGrid,
    drift_for_step: Callable[[int], DriftPotential],
    cfg: JkoConfig,
    steps: int,
    on_step: Optional[StepCallback] = None,
) -> JkoTrajectory:
    fe_tol = get_settings().fe_tol if cfg.fe_tol is None else cfg.fe_tol
    iterates: List[DensityGrid] = [rho0]
    diagnostics: List[StepDiagnostics] = []
    for k in range(1, steps + 1):
        drift = drift_for_step(k)
        previous = iterates[-1]
        result = jko_step(previous, drift, cfg)
        fe_before = free_energy_under(drift, previous, cfg.beta)
        fe_after = free_energy_under(drift, result.density, cfg.beta)
        if fe_after > fe_before + fe_tol:
            logger.warning(
                f"Free energy rose by {fe_after - fe_before:.3e} at step {k} (tolerance {fe_tol:.1e})"
            )
        record = StepDiagnostics(
            step=k,
            inner_iterations=result.inner_iterations,
            alpha_l1=result.alpha_l1,
            w2_to_previous=w2_quantile(previous, result.density, QuantileMethod.LINEAR),
            free_energy=fe_after,
            free_energy_previous=fe_before,
            band_used=result.band_used,
            fallbacks=result.fallbacks,
            stalled=result.stalled,
        )
        iterates.append(result.density)
        diagnostics.append(record)
        if on_step is not None:
            on_step(record)
    logger.info(f"JKO run finished: {steps} steps, delta={cfg.delta}")
    return JkoTrajectory(
        iterates=iterates, diagnostics=diagnostics, delta=cfg.delta, interpolation=cfg.interpolation
    )


def _step_count(horizon: float, delta: float) -> int:
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    return step_index(horizon, delta)


def run_plain(
    rho0: DensityGrid,
    potential: ParametricPotential,
    theta,
    cfg: JkoConfig,
    horizon: float,
    on_step: Optional[StepCallback] = None,
) -> JkoTrajectory:
    """ceil(T/delta) JKO steps with the true parameter theta."""
    drift = FrozenPotential(potential, theta)
    return _iterate(rho0, lambda k: drift, cfg, _step_count(horizon, cfg.delta), on_step)


def run_offline(
    rho0: DensityGrid,
    potential: ParametricPotential,
    estimate: ThetaEstimate,
    cfg: JkoConfig,
    horizon: float,
    on_step: Optional[StepCallback] = None,
) -> JkoTrajectory:
    """JKO steps with the offline estimate frozen into the drift."""
    drift = FrozenPotential(potential, estimate.theta_hat)
    return _iterate(rho0, lambda k: drift, cfg, _step_count(horizon, cfg.delta), on_step)


def run_online(
    rho0: DensityGrid,
    potential: ParametricPotential,
    trajectory: EstimatorTrajectory,
    cfg: JkoConfig,
    horizon: float,
    scheme: Optional[SchemeTag] = None,
    on_step: Optional[StepCallback] = None,
) -> JkoTrajectory:
    """
    JKO steps whose step-k drift is the scheme's k-th estimate.

    Raises:
        TrajectoryTooShort: If the trajectory has fewer than ceil(T/delta) estimates
    """
    scheme = scheme or trajectory.scheme
    steps = _step_count(horizon, cfg.delta)
    if len(trajectory) < steps:
        raise TrajectoryTooShort(
            f"run needs {steps} estimates, trajectory has {len(trajectory)}",
            needed=steps, available=len(trajectory),
        )
    return _iterate(
        rho0, lambda k: estimated_drift(potential, trajectory, scheme, k), cfg, steps, on_step
    )
