"""
Experiment engine - dispatches a run configuration to the numerical modules.

Every run kind has a handler in a dispatch map. Handlers split their work into
timed stages; heavy stages run in worker threads (asyncio.to_thread) under a
semaphore of `threads`, and replication loops gather their results in
replication order so that output never depends on scheduling. All files go
through one ArtifactWriter, and the run ends with a manifest.
"""

import asyncio
import math
import os
import time
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Awaitable, Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from .. import __version__
from ..config.settings import get_settings
from ..models.estimates import EstimatorTrajectory, SchemeTag
from ..models.fields import ForcingSpec, NoiseKind, ScalingRule
from ..models.gaussian import GaussianState
from ..models.grids import DensityGrid, FieldGrid, Grid1D, TimeGrid
from ..models.jko import JkoTrajectory
from ..models.manifest import ArtifactManifest, StageRecord, StageStatus
from ..models.run_config import ExperimentConfig, RunKind
from ..services.artifacts import ArtifactWriter
from ..services.diagnostics import field_correlation, prop53_sweep, relative_l2_error, run_prop53, scaled_difference
from ..services.estimators import clt_offline_study, estimate_gamma, online_trajectory, solve_offline
from ..services.langevin_sampler import sample_batches, sample_path
from ..services.svg_render import heatmap, line_plot
from .bures_wasserstein import (
    bw_discretization_errors,
    bw_estimated_ode,
    bw_jko_run,
    bw_limit_integrate,
    bw_ode_integrate,
)
from .exceptions import ConfigError
from .fokker_planck import analytic_ou_density_field, cn_solve, online_drift, static_drift
from .grid_core import gaussian_density, l1_distance, scaled_field
from .jko_solver import run_offline, run_online, run_plain
from .limit_fields import (
    brownian_path,
    coupled_forcing_from_estimates,
    fixed_gaussian_path,
    long_format_rows,
    simulate_field,
    subsample_path,
    v1_closed_form_ou,
    white_increments_path,
)
from .potential import FrozenPotential, ParametricPotential, TauField, build_potential, ou_gamma

logger = structlog.get_logger(__name__)

Handler = Callable[["RunContext"], Awaitable[None]]


@dataclass(frozen=True)
class Setup:
    """Objects shared by the grid-based handlers."""

    potential: ParametricPotential
    theta: np.ndarray
    beta: float
    grid: Grid1D
    time_grid: TimeGrid
    rho0: DensityGrid


class RunContext:
    """
    State of one run, passed between the stages of a handler.
    """

    def __init__(self, run_id: str, cfg: ExperimentConfig, writer: ArtifactWriter):
        self.run_id = run_id
        self.cfg = cfg
        self.writer = writer
        self.created_at = datetime.now(timezone.utc)
        self.stages: List[StageRecord] = []
        self.summary: Dict[str, Any] = {}

    def add_stage(self, stage_name: str, details: Optional[Dict[str, Any]] = None) -> StageRecord:
        stage = StageRecord(stage_name=stage_name, started_at=datetime.now(timezone.utc), details=details or {})
        self.stages.append(stage)
        return stage

    def complete_stage(self, stage: StageRecord, started: float, error_message: Optional[str] = None) -> None:
        stage.completed_at = datetime.now(timezone.utc)
        stage.duration_seconds = time.perf_counter() - started
        stage.status = StageStatus.FAILED if error_message else StageStatus.COMPLETED
        stage.error_message = error_message


def build_setup(cfg: ExperimentConfig) -> Setup:
    """
    Potential, grids and initial density of a grid-based run.

    Raises:
        ConfigError: If the potential is not one-dimensional
    """
    potential = build_potential(cfg.potential.id, cfg.potential.params)
    if potential.dim_x != 1:
        raise ConfigError("grid experiments need a one-dimensional potential", dim=potential.dim_x)
    theta = np.atleast_1d(np.asarray(cfg.potential.theta, dtype=float))
    if theta.size != potential.dim_theta:
        raise ConfigError(f"theta has {theta.size} entries, potential expects {potential.dim_theta}")
    grid = cfg.grid.build()
    return Setup(
        potential=potential,
        theta=theta,
        beta=cfg.potential.beta,
        grid=grid,
        time_grid=cfg.time.build(),
        rho0=gaussian_density(grid, float(cfg.initial.mean[0]), cfg.initial.variance),
    )


def reference_density_field(setup: Setup, cfg: ExperimentConfig) -> FieldGrid:
    """rho(t, x) with the true parameter: analytic OU marginals, or Crank-Nicolson otherwise."""
    if setup.potential.name == "quadratic":
        return analytic_ou_density_field(
            float(setup.theta[0]), float(cfg.initial.mean[0]), cfg.initial.variance,
            setup.beta, setup.grid, setup.time_grid,
        )
    drift = static_drift(FrozenPotential(setup.potential, setup.theta), setup.grid)
    return cn_solve(setup.rho0, drift, setup.beta, setup.time_grid)


def estimator_trajectory(cfg: ExperimentConfig, setup: Setup, replication: int) -> EstimatorTrajectory:
    """Online estimates for ceil(T/delta) JKO steps from batches of replication r."""
    if cfg.sampling.scheme == SchemeTag.OFFLINE:
        raise ConfigError("this run needs an online estimation scheme")
    batches = sample_batches(
        setup.potential, setup.theta, setup.beta, cfg.sampling.eta, cfg.sampling.batch_size,
        cfg.steps_needed, cfg.sampling.initial, cfg.run.seed, replication=replication,
        substeps=cfg.sampling.em_substeps,
    )
    return online_trajectory(cfg.sampling.scheme, setup.potential, batches)


def coupled_fields(cfg: ExperimentConfig, setup: Setup, reference: FieldGrid, replication: int):
    """
    The scaled JKO error and the simulated limit field driven by the same estimates.

    Returns:
        (V_hat, V1, correlation over the comparison window)
    """
    trajectory = estimator_trajectory(cfg, setup, replication)
    jko = run_online(setup.rho0, setup.potential, trajectory, cfg.jko_config(), cfg.time.horizon)
    m, delta = cfg.sampling.batch_size, cfg.jko.delta
    v_hat = scaled_difference(jko, reference, math.sqrt(m / delta))
    noise = coupled_forcing_from_estimates(trajectory, setup.theta, m, delta, time_grid=setup.time_grid)
    spec = ForcingSpec(
        density=reference,
        tau=TauField.identity(setup.potential, setup.theta),
        noise=noise,
        rule=ScalingRule.COUPLED,
    )
    v1 = simulate_field(spec, setup.potential, setup.theta, setup.beta)
    corr = field_correlation(v_hat, v1, t_min=cfg.limit.t_min, x_max=cfg.limit.x_max)
    return v_hat, v1, corr


def _gamma_for(cfg: ExperimentConfig, q: int) -> np.ndarray:
    if cfg.limit.gamma is not None:
        return np.atleast_2d(np.asarray(cfg.limit.gamma, dtype=float))
    return ou_gamma(cfg.sampling.eta, cfg.potential.beta, q)


def _density_rows(density: DensityGrid) -> List[Tuple[float, float]]:
    return list(zip(density.grid.nodes.tolist(), density.values.tolist()))


def _jko_rows(trajectory: JkoTrajectory) -> List[Tuple[int, float, float, float]]:
    x = trajectory.grid.nodes
    return [
        (k, k * trajectory.delta, float(x[j]), float(rho.values[j]))
        for k, rho in enumerate(trajectory.iterates)
        for j in range(x.size)
    ]


def _diagnostics_sidecar(trajectory: JkoTrajectory) -> Dict[str, Any]:
    return {
        "delta": trajectory.delta,
        "steps": trajectory.steps,
        "w2_sum": trajectory.w2_sum(),
        "diagnostics": [d.model_dump(mode="json") for d in trajectory.diagnostics],
    }


class ExperimentEngine:
    """
    Runs one configuration end to end.

    The engine owns the dispatch map from run kind to handler; a handler reads
    the configuration from the context, runs its stages and writes its files.
    """

    def __init__(self, threads: Optional[int] = None):
        self.settings = get_settings()
        self.threads = threads or self.settings.default_threads
        self._semaphore: Optional[asyncio.Semaphore] = None

        self.handlers: Dict[RunKind, Handler] = {
            RunKind.EMPTY: self._handle_empty,
            RunKind.FIG1_DENSITY: self._handle_fig1_density,
            RunKind.FIG2_SLICE: self._handle_fig2_slice,
            RunKind.FIG3_CONTOUR: self._handle_fig3_contour,
            RunKind.PROP53_VARIANCE: self._handle_prop53_variance,
            RunKind.PROP53_SWEEP: self._handle_prop53_sweep,
            RunKind.CLT_OFFLINE: self._handle_clt_offline,
            RunKind.ORACLE_V1: self._handle_oracle_v1,
            RunKind.BW_CONVERGENCE: self._handle_bw_convergence,
            RunKind.JKO_RUN: self._handle_jko_run,
            RunKind.FP_RUN: self._handle_fp_run,
            RunKind.SPDE_RUN: self._handle_spde_run,
            RunKind.BW_RUN: self._handle_bw_run,
            RunKind.ESTIMATE: self._handle_estimate,
        }

    def default_output_dir(self, cfg: ExperimentConfig) -> str:
        return os.path.join(self.settings.output_path, f"{cfg.experiment.value}_seed{cfg.run.seed}")

    async def run(self, cfg: ExperimentConfig, output_dir: Optional[str] = None) -> ArtifactManifest:
        """
        Execute a configuration.

        Args:
            cfg: Validated run configuration
            output_dir: Artifact directory; cfg.run.output_dir or the settings output root by default

        Returns:
            The manifest that was written last

        Raises:
            ConfigError: For an unhandled run kind or inconsistent sections
            NumericalError: Propagated from the numerical modules
        """
        output_dir = output_dir or cfg.run.output_dir or self.default_output_dir(cfg)
        run_id = f"run_{uuid.uuid4().hex[:12]}"
        ctx = RunContext(run_id, cfg, ArtifactWriter(output_dir))
        self._semaphore = asyncio.Semaphore(cfg.run.threads or self.threads)

        handler = self.handlers.get(cfg.experiment)
        if handler is None:
            raise ConfigError(f"No handler for run kind {cfg.experiment.value}")

        structlog.contextvars.bind_contextvars(experiment=cfg.experiment.value, seed=cfg.run.seed, run_id=run_id)
        started = time.perf_counter()
        try:
            logger.info("run_started", output_dir=str(output_dir), replications=cfg.run.replications)
            await handler(ctx)
            manifest = ArtifactManifest(
                run_id=run_id,
                experiment=cfg.experiment.value,
                seed=cfg.run.seed,
                replications=cfg.run.replications,
                config_hash=cfg.config_hash(),
                package_version=__version__,
                created_at=ctx.created_at,
                wall_time_seconds=time.perf_counter() - started,
                stages=ctx.stages,
                summary=ctx.summary,
            )
            await ctx.writer.write_manifest(manifest)
            logger.info("run_completed", files=len(ctx.writer.files), wall_time=manifest.wall_time_seconds)
            return manifest.model_copy(update={"files": list(ctx.writer.files)})
        finally:
            structlog.contextvars.unbind_contextvars("experiment", "seed", "run_id")

    async def _stage(self, ctx: RunContext, name: str, fn: Callable[..., Any], *args, **kwargs) -> Any:
        """Run fn in a worker thread as one timed stage."""
        stage = ctx.add_stage(name)
        started = time.perf_counter()
        try:
            async with self._semaphore:
                result = await asyncio.to_thread(fn, *args, **kwargs)
        except Exception as e:
            ctx.complete_stage(stage, started, str(e))
            logger.error("stage_failed", stage=name, error=str(e))
            raise
        ctx.complete_stage(stage, started)
        logger.debug("stage_completed", stage=name, duration=stage.duration_seconds)
        return result

    async def _replicate(self, ctx: RunContext, name: str, fn: Callable[[int], Any], count: int) -> List[Any]:
        """fn(0..count-1) in worker threads; results in replication order."""
        stage = ctx.add_stage(name, {"replications": count})
        started = time.perf_counter()

        async def one(r: int):
            async with self._semaphore:
                return await asyncio.to_thread(fn, r)

        try:
            results = await asyncio.gather(*(one(r) for r in range(count)))
        except Exception as e:
            ctx.complete_stage(stage, started, str(e))
            logger.error("stage_failed", stage=name, error=str(e))
            raise
        ctx.complete_stage(stage, started)
        return list(results)

    # Handlers

    async def _handle_empty(self, ctx: RunContext) -> None:
        logger.info("empty_run")

    async def _handle_fig1_density(self, ctx: RunContext) -> None:
        cfg = ctx.cfg
        setup = build_setup(cfg)
        reference = await self._stage(ctx, "reference", reference_density_field, setup, cfg)
        rho_final = reference.density_at(setup.time_grid.steps)

        def replicate(r: int):
            trajectory = estimator_trajectory(cfg, setup, r)
            jko = run_online(setup.rho0, setup.potential, trajectory, cfg.jko_config(), cfg.time.horizon)
            return jko.final, l1_distance(jko.final, rho_final)

        results = await self._replicate(ctx, "jko_online", replicate, cfg.run.replications)
        rho_hat = results[0][0]
        await ctx.writer.write_csv("rho_hat_T.csv", ["x", "density"], _density_rows(rho_hat),
                                   "Estimated JKO density at the horizon")
        await ctx.writer.write_csv("rho_T.csv", ["x", "density"], _density_rows(rho_final),
                                   "Reference density at the horizon")
        l1 = [d for _, d in results]
        await ctx.writer.write_csv("fig1_l1.csv", ["replication", "l1"], list(enumerate(l1)),
                                   "L1 distance per replication")
        ctx.summary.update({"l1_first": l1[0], "l1_max": max(l1), "l1_mean": float(np.mean(l1))})
        if cfg.run.svg:
            x = setup.grid.nodes
            svg = line_plot(
                [("estimated JKO", x, rho_hat.values), ("reference", x, rho_final.values)],
                title=f"densities at T={cfg.time.horizon}", ylabel="density",
            )
            await ctx.writer.write_text("fig1_density.svg", svg, description="Density comparison")

    async def _coupled_replications(self, ctx: RunContext):
        cfg = ctx.cfg
        setup = build_setup(cfg)
        reference = await self._stage(ctx, "reference", reference_density_field, setup, cfg)
        results = await self._replicate(
            ctx, "coupled_fields", lambda r: coupled_fields(cfg, setup, reference, r), cfg.run.replications
        )
        correlations = [c for _, _, c in results]
        await ctx.writer.write_csv(
            "field_correlation.csv", ["replication", "correlation"], list(enumerate(correlations)),
            "Correlation of the scaled JKO error and the simulated limit field",
        )
        ctx.summary.update({
            "correlation_first": correlations[0],
            "correlation_min": min(correlations),
            "fraction_at_least_0.8": float(np.mean([c >= 0.8 for c in correlations])),
        })
        return setup, results[0][0], results[0][1]

    async def _handle_fig2_slice(self, ctx: RunContext) -> None:
        setup, v_hat, v1 = await self._coupled_replications(ctx)
        x = setup.grid.nodes
        last = setup.time_grid.steps
        rows = list(zip(x.tolist(), v_hat.row(last).tolist(), v1.row(last).tolist()))
        await ctx.writer.write_csv("fig2_slice.csv", ["x", "v_hat", "v1"], rows,
                                   "Scaled error and limit field at the horizon")
        ctx.summary["v_hat_max_abs_T"] = float(np.max(np.abs(v_hat.row(last))))
        if ctx.cfg.run.svg:
            svg = line_plot([("V_hat", x, v_hat.row(last)), ("V1", x, v1.row(last))],
                            title=f"fields at T={ctx.cfg.time.horizon}", ylabel="V")
            await ctx.writer.write_text("fig2_slice.svg", svg, description="Field slices")

    async def _handle_fig3_contour(self, ctx: RunContext) -> None:
        setup, v_hat, v1 = await self._coupled_replications(ctx)
        await ctx.writer.write_csv("v_hat_contour.csv", ["t", "x", "value"], long_format_rows(v_hat),
                                   "Scaled JKO error on the space-time grid")
        await ctx.writer.write_csv("v1_contour.csv", ["t", "x", "value"], long_format_rows(v1),
                                   "Simulated limit field on the space-time grid")
        if ctx.cfg.run.svg:
            t, x = setup.time_grid.nodes, setup.grid.nodes
            await ctx.writer.write_text("v_hat_contour.svg", heatmap(v_hat.values, t, x, "V_hat"))
            await ctx.writer.write_text("v1_contour.svg", heatmap(v1.values, t, x, "V1"))

    async def _handle_prop53_variance(self, ctx: RunContext) -> None:
        cfg, p = ctx.cfg, ctx.cfg.prop53
        rows = await self._stage(
            ctx, "prop53", run_prop53, p.t, p.n_list, max(cfg.run.replications, 2), cfg.run.seed,
            p.integral, p.refine, cfg.potential.beta,
        )
        await ctx.writer.write_csv("prop53_variance.csv", rows[0].csv_header(), [r.csv_row() for r in rows],
                                   "Variance of the scaled sampled-mean gap")
        ctx.summary.update({f"variance_n{n}": r.variance for n, r in zip(p.n_list, rows)})
        ctx.summary["limit_variance"] = rows[0].limit_variance

    async def _handle_prop53_sweep(self, ctx: RunContext) -> None:
        cfg, p = ctx.cfg, ctx.cfg.prop53
        replications = cfg.run.replications if cfg.run.replications >= 2 else 0
        rows = await self._stage(
            ctx, "prop53_sweep", prop53_sweep, p.t, p.sweep_unit, tuple(range(1, p.sweep_max + 1)),
            replications, cfg.run.seed, cfg.potential.beta,
        )
        await ctx.writer.write_csv("prop53_sweep.csv", rows[0].csv_header(), [r.csv_row() for r in rows],
                                   "Variance along delta_m = m * unit")
        ctx.summary["limit_variance"] = rows[0].limit_variance
        if cfg.run.svg:
            m = np.arange(1, len(rows) + 1)
            svg = line_plot(
                [("variance", m, [r.variance for r in rows]), ("limit", m, [r.limit_variance for r in rows])],
                title="sampled-mean gap variance", xlabel="m", ylabel="variance",
            )
            await ctx.writer.write_text("prop53_sweep.svg", svg)

    async def _handle_clt_offline(self, ctx: RunContext) -> None:
        cfg = ctx.cfg
        study = await self._stage(
            ctx, "clt_offline", clt_offline_study, float(cfg.potential.theta[0]), cfg.clt.eta, cfg.clt.n,
            max(cfg.run.replications, 2), cfg.run.seed, cfg.potential.beta,
        )
        await ctx.writer.write_csv(
            "clt_standardized.csv", ["replication", "standardized"], list(enumerate(study["standardized"].tolist())),
            "sqrt(n)(theta_hat - theta)/gamma per replication",
        )
        ctx.summary.update({
            "gamma": study["gamma"],
            "ks_statistic": study["ks_statistic"],
            "p_value": study["p_value"],
            "ks_passed": bool(study["p_value"] >= cfg.clt.alpha),
        })

    async def _handle_oracle_v1(self, ctx: RunContext) -> None:
        cfg, lim = ctx.cfg, ctx.cfg.limit
        potential = build_potential(cfg.potential.id, cfg.potential.params)
        theta = np.atleast_1d(np.asarray(cfg.potential.theta, dtype=float))
        if potential.name != "quadratic" or potential.dim_x != 1 or np.any(theta != 0.0) or cfg.potential.beta != 1.0:
            raise ConfigError("the closed-form oracle needs the 1D quadratic family with theta=0, beta=1")
        gamma = _gamma_for(cfg, 1)
        tau = TauField.from_gamma(potential, theta, gamma)
        fine_grid = Grid1D(half_width=cfg.grid.half_width, intervals=lim.oracle_intervals)
        fine_time = TimeGrid(horizon=cfg.time.horizon, steps=lim.oracle_steps)
        levels = [(fine_grid, fine_time, 1)]
        if lim.oracle_intervals % 2 == 0 and lim.oracle_steps % 2 == 0:
            levels.insert(0, (Grid1D(half_width=cfg.grid.half_width, intervals=lim.oracle_intervals // 2),
                              TimeGrid(horizon=cfg.time.horizon, steps=lim.oracle_steps // 2), 2))

        def replicate(r: int):
            noise = brownian_path(fine_time, 1, cfg.run.seed, key=(0, r))
            out = []
            for grid, time_grid, factor in levels:
                path = noise if factor == 1 else subsample_path(noise, factor)
                density = analytic_ou_density_field(0.0, 0.0, 1.0, 1.0, grid, time_grid)
                spec = ForcingSpec(density=density, tau=tau, noise=path, rule=ScalingRule.INVERSE_TIME)
                simulated = simulate_field(spec, potential, theta, 1.0)
                rows = [v1_closed_form_ou(float(gamma[0, 0]), path, float(t), grid.nodes) for t in time_grid.nodes]
                oracle = scaled_field(grid, time_grid, np.array(rows))
                error = relative_l2_error(simulated, oracle, t_min=lim.t_min, x_max=lim.x_max)
                out.append((grid.intervals, time_grid.steps, error, simulated, oracle))
            return out

        results = await self._replicate(ctx, "oracle_v1", replicate, cfg.run.replications)
        rows = [
            [r, J, I, error]
            for r, levels_out in enumerate(results)
            for J, I, error, _, _ in levels_out
        ]
        await ctx.writer.write_csv("oracle_v1_errors.csv", ["replication", "J", "I", "relative_l2"], rows,
                                   "Relative L2 error of the simulated field against the closed form")
        _, _, _, simulated, oracle = results[0][-1]
        await ctx.writer.write_csv("v1_simulated.csv", ["t", "x", "value"], long_format_rows(simulated))
        await ctx.writer.write_csv("v1_closed_form.csv", ["t", "x", "value"], long_format_rows(oracle))
        finest = [levels_out[-1][2] for levels_out in results]
        ctx.summary.update({"relative_l2_max": max(finest), "relative_l2_mean": float(np.mean(finest))})
        if len(levels) == 2:
            ctx.summary["refinement_decreases"] = all(lv[1][2] <= lv[0][2] for lv in results)

    def _bw_inputs(self, cfg: ExperimentConfig):
        potential = build_potential(cfg.potential.id, cfg.potential.params)
        theta = np.atleast_1d(np.asarray(cfg.potential.theta, dtype=float))
        theta = np.broadcast_to(theta, (potential.dim_theta,)).copy() if theta.size == 1 else theta
        if potential.dim_x != cfg.bw.dim:
            raise ConfigError(f"bw.dim={cfg.bw.dim} does not match the potential dimension {potential.dim_x}")
        state0 = GaussianState(mean=cfg.bw.mean_vector(), cov=cfg.bw.covariance())
        return potential, theta, state0

    async def _handle_bw_convergence(self, ctx: RunContext) -> None:
        cfg, bw = ctx.cfg, ctx.cfg.bw
        potential, theta, state0 = self._bw_inputs(cfg)
        beta, horizon = cfg.potential.beta, cfg.time.horizon

        errors = await self._stage(
            ctx, "bw_discretization", bw_discretization_errors, potential, theta, state0, horizon, bw.deltas, beta, bw.dt
        )
        await ctx.writer.write_csv(
            "bw_discretization.csv", ["delta", "mean_error", "cov_error"],
            [[e["delta"], e["mean_error"], e["cov_error"]] for e in errors],
            "Max BW-JKO errors against the ODE per delta",
        )
        ratios = [
            errors[i]["mean_error"] / errors[i + 1]["mean_error"]
            for i in range(len(errors) - 1) if errors[i + 1]["mean_error"] > 0
        ]
        ctx.summary["mean_error_ratios"] = ratios

        states = await self._stage(ctx, "bw_ode", bw_ode_integrate, potential, theta, state0, horizon, bw.dt, beta,
                                   bw.quadrature_order)
        q = potential.dim_theta
        gamma = _gamma_for(cfg, q)
        tau = TauField.from_gamma(potential, theta, gamma)
        z = np.ones(q)
        limit = await self._stage(ctx, "bw_limit", bw_limit_integrate, "ode", potential, theta, tau, states, z,
                                  bw.quadrature_order)
        await ctx.writer.write_csv("bw_limit.csv", limit.csv_header(), limit.csv_rows(), "Limit system with Z = 1")

        def finite_n(n: int):
            theta_n = theta + gamma @ z / math.sqrt(n)
            perturbed = bw_estimated_ode(potential, theta_n, state0, horizon, bw.dt, beta=beta,
                                         order=bw.quadrature_order)
            gaps = [
                float(np.max(np.abs(math.sqrt(n) * (p.mean - s.mean) - v.v_mean)))
                for p, s, v in zip(perturbed.states, states.states, limit.states)
            ]
            return max(gaps)

        gaps = await self._replicate(ctx, "bw_finite_n", lambda i: finite_n(bw.n_list[i]), len(bw.n_list))
        await ctx.writer.write_csv("bw_finite_n.csv", ["n", "max_gap"], list(zip(bw.n_list, gaps)),
                                   "sqrt(n)(mu_n - mu) against V_mu")
        ctx.summary["finite_n_gaps"] = dict(zip([str(n) for n in bw.n_list], gaps))

    async def _handle_bw_run(self, ctx: RunContext) -> None:
        cfg, bw = ctx.cfg, ctx.cfg.bw
        potential, theta, state0 = self._bw_inputs(cfg)
        beta, horizon = cfg.potential.beta, cfg.time.horizon
        states = await self._stage(ctx, "bw_ode", bw_ode_integrate, potential, theta, state0, horizon, bw.dt, beta,
                                   bw.quadrature_order)
        await ctx.writer.write_csv("bw_ode.csv", states.csv_header(), states.csv_rows(), "Gaussian flow ODE")
        jko = await self._stage(ctx, "bw_jko", bw_jko_run, state0, potential, theta, cfg.jko.delta, horizon, beta,
                                bw.quadrature_order)
        await ctx.writer.write_csv("bw_jko.csv", jko.csv_header(), jko.csv_rows(), "BW-JKO iterates")

        q = potential.dim_theta
        tau = TauField.from_gamma(potential, theta, _gamma_for(cfg, q))
        time_grid = TimeGrid(horizon=horizon, steps=len(states.times) - 1)
        if bw.system == "ode":
            noise = fixed_gaussian_path(time_grid, q, seed=cfg.run.seed)
        else:
            noise = brownian_path(time_grid, q, cfg.run.seed)
        limit = await self._stage(ctx, f"bw_limit_{bw.system}", bw_limit_integrate, bw.system, potential, theta, tau,
                                  states, noise, bw.quadrature_order)
        await ctx.writer.write_csv("bw_limit.csv", limit.csv_header(), limit.csv_rows(), f"Limit {bw.system} system")
        ctx.summary.update({"mu_T": states.final.mean.tolist(), "sigma_T": states.final.cov.tolist()})

    async def _offline_estimate(self, ctx: RunContext, setup: Setup):
        cfg = ctx.cfg
        path = await self._stage(
            ctx, "sample_path", sample_path, setup.potential, setup.theta, setup.beta, cfg.sampling.eta,
            cfg.sampling.offline_n, cfg.sampling.initial, cfg.run.seed, cfg.sampling.em_substeps,
        )
        estimate = await self._stage(ctx, "solve_offline", solve_offline, setup.potential, path)
        return path, estimate

    async def _handle_jko_run(self, ctx: RunContext) -> None:
        cfg = ctx.cfg
        setup = build_setup(cfg)
        jko_cfg = cfg.jko_config()
        if not cfg.jko.estimated:
            trajectory = await self._stage(ctx, "jko_plain", run_plain, setup.rho0, setup.potential, setup.theta,
                                           jko_cfg, cfg.time.horizon)
        elif cfg.sampling.scheme == SchemeTag.OFFLINE:
            _, estimate = await self._offline_estimate(ctx, setup)
            trajectory = await self._stage(ctx, "jko_offline", run_offline, setup.rho0, setup.potential, estimate,
                                           jko_cfg, cfg.time.horizon)
        else:
            estimates = await self._stage(ctx, "estimate_online", estimator_trajectory, cfg, setup, 0)
            trajectory = await self._stage(ctx, "jko_online", run_online, setup.rho0, setup.potential, estimates,
                                           jko_cfg, cfg.time.horizon)
        await ctx.writer.write_csv("jko_iterates.csv", ["k", "t", "x", "density"], _jko_rows(trajectory),
                                   "JKO iterates in long format")
        await ctx.writer.write_json("jko_diagnostics.json", _diagnostics_sidecar(trajectory), "Per-step diagnostics")
        ctx.summary.update({"steps": trajectory.steps, "w2_sum": trajectory.w2_sum()})

    async def _handle_fp_run(self, ctx: RunContext) -> None:
        cfg = ctx.cfg
        setup = build_setup(cfg)
        if not cfg.jko.estimated:
            provider = static_drift(FrozenPotential(setup.potential, setup.theta), setup.grid)
        elif cfg.sampling.scheme == SchemeTag.OFFLINE:
            _, estimate = await self._offline_estimate(ctx, setup)
            provider = static_drift(FrozenPotential(setup.potential, estimate.theta_hat), setup.grid)
        else:
            estimates = await self._stage(ctx, "estimate_online", estimator_trajectory, cfg, setup, 0)
            provider = online_drift(setup.potential, estimates, cfg.sampling.scheme, cfg.jko.delta, setup.grid,
                                    setup.time_grid, cfg.jko.interpolation)
        field = await self._stage(ctx, "cn_solve", cn_solve, setup.rho0, provider, setup.beta, setup.time_grid)
        await ctx.writer.write_csv("fp_density.csv", ["t", "x", "density"], long_format_rows(field),
                                   "Fokker-Planck density in long format")

    async def _handle_spde_run(self, ctx: RunContext) -> None:
        cfg, lim = ctx.cfg, ctx.cfg.limit
        setup = build_setup(cfg)
        reference = await self._stage(ctx, "reference", reference_density_field, setup, cfg)
        q = setup.potential.dim_theta
        if lim.noise == NoiseKind.ESTIMATOR_COUPLED:
            if lim.rule != ScalingRule.COUPLED:
                raise ConfigError("estimator-coupled noise needs limit.rule = 'coupled'")
            estimates = await self._stage(ctx, "estimate_online", estimator_trajectory, cfg, setup, 0)
            noise = coupled_forcing_from_estimates(
                estimates, setup.theta, cfg.sampling.batch_size, cfg.jko.delta, time_grid=setup.time_grid
            )
            tau = TauField.identity(setup.potential, setup.theta)
        else:
            generators = {
                NoiseKind.BROWNIAN: lambda: brownian_path(setup.time_grid, q, cfg.run.seed),
                NoiseKind.WHITE_INCREMENTS: lambda: white_increments_path(setup.time_grid, q, cfg.run.seed),
                NoiseKind.FIXED_GAUSSIAN: lambda: fixed_gaussian_path(setup.time_grid, q, seed=cfg.run.seed),
            }
            noise = generators[lim.noise]()
            tau = TauField.from_gamma(setup.potential, setup.theta, _gamma_for(cfg, q))
        spec = ForcingSpec(density=reference, tau=tau, noise=noise, rule=lim.rule)
        field = await self._stage(ctx, "simulate_field", simulate_field, spec, setup.potential, setup.theta,
                                  setup.beta)
        await ctx.writer.write_csv("v_field.csv", ["t", "x", "value"], long_format_rows(field),
                                   f"Limit field forced by {lim.noise.value} noise, {lim.rule.value} scaling")
        ctx.summary["max_abs_T"] = float(np.max(np.abs(field.row(setup.time_grid.steps))))

    async def _handle_estimate(self, ctx: RunContext) -> None:
        cfg = ctx.cfg
        potential = build_potential(cfg.potential.id, cfg.potential.params)
        theta = np.atleast_1d(np.asarray(cfg.potential.theta, dtype=float))
        setup = Setup(potential=potential, theta=theta, beta=cfg.potential.beta, grid=cfg.grid.build(),
                      time_grid=cfg.time.build(), rho0=gaussian_density(cfg.grid.build(), 0.0, 1.0))
        path, estimate = await self._offline_estimate(ctx, setup)
        gamma_hat = await self._stage(ctx, "estimate_gamma", estimate_gamma, potential, estimate.theta_hat, path)
        d = path.dim
        await ctx.writer.write_csv(
            "path.csv", ["i", "t"] + [f"x_{i + 1}" for i in range(d)],
            [[i + 1, t] + list(x) for i, (t, x) in enumerate(zip(path.times.tolist(), path.observations.tolist()))],
            "Observed Langevin path",
        )
        await ctx.writer.write_json("path.json", {
            "spacing": path.spacing, "n": path.n, "dim": d, "seed": path.seed, "key": path.key,
            "initial": path.initial.model_dump(mode="json"), "potential": potential.describe(),
            "theta": theta.tolist(), "beta": cfg.potential.beta,
        }, "Path metadata")
        await ctx.writer.write_json("estimate.json", {
            "theta_hat": estimate.theta_hat.tolist(), "gamma_hat": np.asarray(gamma_hat).tolist(),
            "n_used": estimate.n_used, "iterations": estimate.iterations, "residual_norm": estimate.residual_norm,
        }, "Offline estimate")
        if cfg.sampling.scheme != SchemeTag.OFFLINE:
            trajectory = await self._stage(ctx, "estimate_online", estimator_trajectory, cfg, setup, 0)
            q = trajectory.estimates.shape[1]
            await ctx.writer.write_csv(
                "estimator_trajectory.csv", ["k"] + [f"theta_{i + 1}" for i in range(q)],
                [[k + 1] + row for k, row in enumerate(trajectory.estimates.tolist())],
                f"{trajectory.scheme.value} estimates",
            )
        ctx.summary["theta_hat"] = estimate.theta_hat.tolist()


async def run_experiment(
    cfg: ExperimentConfig, output_dir: Optional[str] = None, threads: Optional[int] = None
) -> ArtifactManifest:
    """Run one configuration on a fresh engine and return its manifest."""
    return await ExperimentEngine(threads=threads).run(cfg, output_dir)
