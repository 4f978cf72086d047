"""
Run configuration documents.

A run is described by one TOML or JSON document with per-module sections.
Every section rejects unknown keys, so a typo fails the run before any work
is done. Defaults reproduce the reference OU setup (beta=1, delta=0.01, T=0.5,
D=5, I=50, J=200, m=10, eta=1, rho0 = N(0, 1.44), theta=0).
"""

import hashlib
import json
import tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.exceptions import ConfigError
from ..core.grid_core import step_index
from .estimates import InitialLaw, SchemeTag
from .fields import NoiseKind, ScalingRule
from .grids import Grid1D, Interpolation, TimeGrid
from .jko import InnerConfig, JkoConfig
from .study import IntegralMethod
from .transport import BandPolicy


class RunKind(str, Enum):
    """What a run produces: a named experiment or a single-module command."""
    EMPTY = "empty"
    FIG1_DENSITY = "fig1_density"
    FIG2_SLICE = "fig2_slice"
    FIG3_CONTOUR = "fig3_contour"
    PROP53_VARIANCE = "prop53_variance"
    PROP53_SWEEP = "prop53_sweep"
    CLT_OFFLINE = "clt_offline"
    ORACLE_V1 = "oracle_v1"
    BW_CONVERGENCE = "bw_convergence"
    JKO_RUN = "jko_run"
    FP_RUN = "fp_run"
    SPDE_RUN = "spde_run"
    BW_RUN = "bw_run"
    ESTIMATE = "estimate"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class RunSection(_Section):
    """Seeds, replications and output options."""

    seed: int = Field(default=0, ge=0, lt=2**64, description="64-bit seed")
    replications: int = Field(default=1, ge=1, description="Replication count R")
    threads: Optional[int] = Field(default=None, ge=1, description="Worker threads, settings default if unset")
    output_dir: Optional[str] = Field(default=None, description="Artifact directory")
    svg: bool = Field(default=False, description="Also render SVG figures")


class GridSection(_Section):
    half_width: float = Field(default=5.0, gt=0, description="Half width D")
    intervals: int = Field(default=200, ge=4, description="Spatial intervals J")

    def build(self) -> Grid1D:
        return Grid1D(half_width=self.half_width, intervals=self.intervals)


class TimeSection(_Section):
    horizon: float = Field(default=0.5, gt=0, description="Horizon T")
    steps: int = Field(default=50, ge=1, description="Time steps I")

    def build(self) -> TimeGrid:
        return TimeGrid(horizon=self.horizon, steps=self.steps)


class PotentialSection(_Section):
    id: str = Field(default="quadratic", description="Registered potential id")
    params: Dict[str, Any] = Field(default_factory=dict, description="Constructor parameters")
    theta: List[float] = Field(default_factory=lambda: [0.0], description="True parameter")
    beta: float = Field(default=1.0, gt=0, description="Inverse temperature")


class InitialDensitySection(_Section):
    """Gaussian initial density rho0 on the grid (or Gaussian state in d dimensions)."""

    mean: List[float] = Field(default_factory=lambda: [0.0])
    variance: float = Field(default=1.44, gt=0)


class SamplingSection(_Section):
    eta: float = Field(default=1.0, gt=0, description="Observation spacing")
    batch_size: int = Field(default=10, ge=1, description="Batch size m")
    scheme: SchemeTag = Field(default=SchemeTag.ONLINE_CUMULATIVE, description="Estimation scheme")
    initial: InitialLaw = Field(default_factory=InitialLaw.stationary, description="Law of X(0)")
    offline_n: int = Field(default=1000, ge=1, description="Observations for the offline estimate")
    em_substeps: int = Field(default=100, ge=1, description="Euler-Maruyama substeps for non-quadratic families")


class JkoSection(_Section):
    delta: float = Field(default=0.01, gt=0, description="JKO step")
    estimated: bool = Field(default=True, description="Drive the drift with estimates instead of the true theta")
    inner: InnerConfig = Field(default_factory=InnerConfig)
    band: BandPolicy = Field(default_factory=BandPolicy)
    interpolation: Interpolation = Field(default=Interpolation.CEIL)
    fe_tol: Optional[float] = Field(default=None, gt=0)


class LimitSection(_Section):
    noise: NoiseKind = Field(default=NoiseKind.BROWNIAN, description="Noise for spde-run")
    rule: ScalingRule = Field(default=ScalingRule.INVERSE_TIME, description="Scaling rule for spde-run")
    gamma: Optional[List[List[float]]] = Field(default=None, description="gamma_theta; OU closed form if unset")
    oracle_intervals: int = Field(default=400, ge=4, description="J for the closed-form oracle")
    oracle_steps: int = Field(default=200, ge=1, description="I for the closed-form oracle")
    t_min: float = Field(default=0.1, ge=0, description="Comparison window start")
    x_max: float = Field(default=3.0, gt=0, description="Comparison window |x| bound")


class BwSection(_Section):
    dim: int = Field(default=1, ge=1)
    mean: List[float] = Field(default_factory=lambda: [0.0])
    cov: Optional[List[List[float]]] = Field(default=None, description="Initial covariance, 1.44 I if unset")
    dt: float = Field(default=1e-3, gt=0, description="ODE step")
    deltas: List[float] = Field(default_factory=lambda: [0.04, 0.02, 0.01])
    system: str = Field(default="ode", pattern="^(ode|sde)$")
    n_list: List[int] = Field(default_factory=lambda: [10_000, 1_000_000])
    quadrature_order: Optional[int] = Field(default=None, ge=2)

    def covariance(self) -> np.ndarray:
        if self.cov is None:
            return 1.44 * np.eye(self.dim)
        return np.atleast_2d(np.asarray(self.cov, dtype=float))

    def mean_vector(self) -> np.ndarray:
        m = np.asarray(self.mean, dtype=float)
        return np.broadcast_to(m, (self.dim,)).copy() if m.size == 1 else m


class Prop53Section(_Section):
    t: float = Field(default=1.0, gt=0)
    n_list: List[int] = Field(default_factory=lambda: [1000])
    integral: IntegralMethod = Field(default=IntegralMethod.TRAPEZOID)
    refine: int = Field(default=100, ge=1)
    sweep_unit: float = Field(default=1e-4, gt=0)
    sweep_max: int = Field(default=100, ge=1)


class CltSection(_Section):
    n: int = Field(default=2000, ge=2)
    eta: float = Field(default=1.0, gt=0)
    alpha: float = Field(default=0.01, gt=0, lt=1, description="KS test level")


class ExperimentConfig(_Section):
    """A complete run description."""

    experiment: RunKind = Field(default=RunKind.EMPTY)
    run: RunSection = Field(default_factory=RunSection)
    grid: GridSection = Field(default_factory=GridSection)
    time: TimeSection = Field(default_factory=TimeSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    initial: InitialDensitySection = Field(default_factory=InitialDensitySection)
    sampling: SamplingSection = Field(default_factory=SamplingSection)
    jko: JkoSection = Field(default_factory=JkoSection)
    limit: LimitSection = Field(default_factory=LimitSection)
    bw: BwSection = Field(default_factory=BwSection)
    prop53: Prop53Section = Field(default_factory=Prop53Section)
    clt: CltSection = Field(default_factory=CltSection)

    @field_validator("experiment", mode="before")
    @classmethod
    def validate_experiment(cls, v):
        return v.replace("-", "_") if isinstance(v, str) else v

    @model_validator(mode="after")
    def validate_grids(self):
        """Figure experiments couple the JKO steps to the time grid one-to-one."""
        if self.experiment in (RunKind.FIG1_DENSITY, RunKind.FIG2_SLICE, RunKind.FIG3_CONTOUR):
            nu = self.time.horizon / self.time.steps
            if abs(nu - self.jko.delta) > 1e-9 * self.jko.delta:
                raise ValueError(f"figure experiments need nu = T/I = delta, got nu={nu}, delta={self.jko.delta}")
        return self

    def jko_config(self) -> JkoConfig:
        return JkoConfig(
            delta=self.jko.delta,
            beta=self.potential.beta,
            grid=self.grid.build(),
            inner=self.jko.inner,
            band=self.jko.band,
            interpolation=self.jko.interpolation,
            fe_tol=self.jko.fe_tol,
        )

    @property
    def steps_needed(self) -> int:
        """Outer JKO steps (and estimator entries) covering the horizon."""
        return step_index(self.time.horizon, self.jko.delta)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _describe(e: ValidationError) -> str:
    return "\n  ".join(f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors())


def parse_config(data: Dict[str, Any], source: str = "<config>") -> ExperimentConfig:
    """
    Validate a configuration mapping.

    Raises:
        ConfigError: Listing every invalid or unknown field
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration in {source}:\n  {_describe(e)}", source=source) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a TOML (.toml) or JSON (anything else) configuration file.

    Raises:
        ConfigError: If the file is missing, malformed or invalid
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}", path=str(path)) from e
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot parse configuration {path}: {e}", path=str(path)) from e
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration {path} must be a table/object at the top level", path=str(path))
    return parse_config(data, str(path))
