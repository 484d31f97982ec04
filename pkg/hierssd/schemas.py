import math
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import ConfigError

HYPER_NAMES = ("mu_logb", "sigma_logb", "mu_loge", "sigma_loge", "rho", "sigma_err")


# --- bioassay-data ---------------------------------------------------------

class Observation(BaseModel):
    model_config = ConfigDict(frozen=True)

    species_id: str
    contaminant_id: str
    concentration: float = Field(ge=0)
    replicate: int
    fluo_initial: float = Field(gt=0)
    fluo_final: float = Field(gt=0)
    # set only when the dataset carries a control label column
    control: Optional[bool] = None

    @property
    def is_control(self) -> bool:
        if self.concentration == 0:
            return True
        return bool(self.control)

    @property
    def ratio(self) -> float:
        return self.fluo_final / self.fluo_initial


class BioassayDataset(BaseModel):
    model_config = ConfigDict(frozen=True)

    observations: list[Observation] = []
    # fluorescence units are never interpreted, only echoed
    units: Optional[str] = None

    def __len__(self):
        return len(self.observations)

    @property
    def species_ids(self) -> list[str]:
        return sorted({o.species_id for o in self.observations})

    @property
    def contaminant_ids(self) -> list[str]:
        return sorted({o.contaminant_id for o in self.observations})

    def to_frame(self) -> pd.DataFrame:
        rows = [o.model_dump() for o in self.observations]
        columns = list(Observation.model_fields)
        return pd.DataFrame(rows, columns=columns)


class ResponsePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    species_id: str
    contaminant_id: str
    concentration: float = Field(gt=0)
    y: float


class ControlSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    species_id: str
    d: float = Field(gt=0)
    n_controls: int = Field(ge=1)
    # None when controls are pooled over contaminants
    contaminant_id: Optional[str] = None


# --- dose-response ---------------------------------------------------------

class CurveFit(BaseModel):
    model_config = ConfigDict(frozen=True)

    species_id: str
    contaminant_id: str
    b: float = Field(gt=0)
    e: float = Field(gt=0)
    d: float = Field(gt=0)
    sigma: float = Field(ge=0)
    sse: float = Field(ge=0)
    n_points: int
    converged: bool


class EcEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float = Field(gt=0, lt=100)
    point: float = Field(gt=0)
    ci_low: float = Field(gt=0)
    ci_high: float = Field(gt=0)
    n_boot: int
    n_failed: int = 0

    @model_validator(mode="after")
    def _ordered(self):
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError("expected ci_low <= point <= ci_high")
        return self


# --- classical-ssd ---------------------------------------------------------

class LognormalSsd(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu_log10: float
    sigma_log10: float = Field(gt=0)
    n_species: int


class HcEstimate(BaseModel):
    """HC_p with its interval; ``n_boot`` counts resamples or posterior draws."""

    model_config = ConfigDict(frozen=True)

    p: float = Field(gt=0, lt=100)
    point: float = Field(gt=0)
    ci_low: float = Field(gt=0)
    ci_high: float = Field(gt=0)
    n_boot: int
    n_dropped: int = 0
    # effect level of the EC values; None for a bare set of CEC values
    x: Optional[float] = None

    @model_validator(mode="after")
    def _ordered(self):
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError("expected ci_low <= point <= ci_high")
        return self


# --- hier-posterior --------------------------------------------------------

class HyperParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu_logb: float
    sigma_logb: float = Field(gt=0)
    mu_loge: float
    sigma_loge: float = Field(gt=0)
    rho: float = Field(gt=-1, lt=1)
    sigma_err: float = Field(gt=0)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in HYPER_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "HyperParams":
        return cls(**{name: float(v) for name, v in zip(HYPER_NAMES, values)})

    def covariance(self) -> np.ndarray:
        off = self.rho * self.sigma_logb * self.sigma_loge
        return np.array([[self.sigma_logb ** 2, off], [off, self.sigma_loge ** 2]])


class SpeciesParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    species_id: str
    log_b: float
    log_e: float

    @field_validator("log_b", "log_e")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v


class PriorSpec(BaseModel):
    """Hyperparameter priors. Normal priors are given as (mean, sd)."""

    model_config = ConfigDict(frozen=True)

    mu_logb_mean: float = -6.0
    mu_logb_sd: float = 6.0
    # half-normal scale for sigma_logb
    sigma_logb_sd: float = 10.0
    mu_loge_mean: float
    mu_loge_sd: float = Field(gt=0)
    sigma_loge_upper: float = 10.0
    sigma_err_upper: float = 2.0
    c_min: float = Field(gt=0)
    c_max: float = Field(gt=0)

    @classmethod
    def from_concentrations(cls, concentrations, **overrides) -> "PriorSpec":
        conc = np.asarray([c for c in concentrations if c > 0], dtype=float)
        if conc.size == 0:
            raise ValueError("no positive concentrations")
        lo, hi = float(np.log10(conc.min())), float(np.log10(conc.max()))
        spread = (hi - lo) / 4 if hi > lo else 1.0
        return cls(
            mu_loge_mean=(lo + hi) / 2,
            mu_loge_sd=spread,
            c_min=float(conc.min()),
            c_max=float(conc.max()),
            **overrides,
        )

    @property
    def mu_logC(self) -> float:
        return self.mu_loge_mean

    @property
    def sigma_logC(self) -> float:
        return self.mu_loge_sd


class McmcConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_iter: int = Field(default=500_000, gt=0)
    thin: int = Field(default=40, gt=0)
    n_chains: int = 3
    burn_in_fraction: float = Field(default=0.5, ge=0, lt=1)
    seed: int = 0
    adapt_window: int = Field(default=500, gt=0)
    target_accept_block: float = 0.35
    target_accept_scalar: float = 0.44
    n_jobs: int = 1

    @model_validator(mode="after")
    def _check(self):
        if self.n_iter < self.thin:
            raise ConfigError(f"n_iter ({self.n_iter}) must be >= thin ({self.thin})")
        if self.n_chains < 2:
            raise ConfigError("n_chains must be >= 2 for Gelman-Rubin diagnostics")
        return self

    @property
    def n_burn(self) -> int:
        return int(self.n_iter * self.burn_in_fraction)

    @property
    def draws_per_chain(self) -> int:
        return (self.n_iter - self.n_burn) // self.thin


class PosteriorSample(BaseModel):
    """Thinned draws of all chains.

    ``draws`` has one row per retained draw: ``chain``, ``iter``, the six
    hyperparameters, then ``log_b[<species>]`` / ``log_e[<species>]``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    contaminant_id: str
    species_ids: list[str]
    draws: pd.DataFrame
    priors: PriorSpec
    config: McmcConfig
    acceptance: dict[str, dict[str, float]] = {}
    gelman_rubin: dict[str, float] = {}

    @property
    def n_chains(self) -> int:
        return int(self.draws["chain"].nunique())

    def __len__(self):
        return len(self.draws)

    def chain_matrix(self, column: str) -> np.ndarray:
        """(n_chains, n_draws) array of one column, truncated to the shortest chain."""
        groups = [g[column].to_numpy() for _, g in self.draws.groupby("chain", sort=True)]
        n = min(len(g) for g in groups)
        return np.vstack([g[:n] for g in groups])

    def hyper_matrix(self) -> np.ndarray:
        return self.draws[list(HYPER_NAMES)].to_numpy(dtype=float)

    def species_draws(self, species_id: str) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.draws[f"log_b[{species_id}]"].to_numpy(dtype=float),
            self.draws[f"log_e[{species_id}]"].to_numpy(dtype=float),
        )


class PriorPosteriorRow(BaseModel):
    parameter: str
    prior_sd: float
    posterior_sd: float
    ratio: float
    q025: float
    q50: float
    q975: float
    data_weak: bool
    exempt: bool = False


# --- community-sim ---------------------------------------------------------

class CommunityDraw(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    theta: HyperParams
    b: np.ndarray
    e: np.ndarray

    def __len__(self):
        return len(self.b)


BandKind = Literal["global_response", "ssd_fraction_affected", "hc5_vs_x", "species_curve"]


class CurveBand(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: BandKind
    grid: np.ndarray
    median: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    units: str = ""
    label: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(self.lo > self.median) or np.any(self.median > self.hi):
            raise ValueError("expected lo <= median <= hi")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"grid_value": self.grid, "lo": self.lo, "median": self.median, "hi": self.hi}
        )


class GecEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float = Field(gt=0, lt=100)
    point: float = Field(gt=0)
    ci_low: float = Field(gt=0)
    ci_high: float = Field(gt=0)
    n_theta: int
    n_species: int


class GlobalResponseEstimate(BaseModel):
    """Percent reduction of the global response at a fixed concentration."""

    model_config = ConfigDict(frozen=True)

    concentration: float = Field(gt=0)
    reduction: float
    ci_low: float
    ci_high: float
    label: Optional[str] = None


# --- cli-report ------------------------------------------------------------

class ColumnMapping(BaseModel):
    species: str = "species"
    contaminant: str = "contaminant"
    concentration: str = "concentration"
    replicate: str = "replicate"
    fluo_initial: str = "fluo_initial"
    fluo_final: str = "fluo_final"
    # optional column whose truthy values mark control rows
    control: Optional[str] = None
    delimiter: str = ","


class RunConfig(BaseModel):
    input_path: Optional[str] = None
    contaminant: Optional[str] = None
    columns: ColumnMapping = ColumnMapping()
    control_pooling: Literal["species", "species_contaminant"] = "species"
    mcmc: McmcConfig = McmcConfig()
    n_boot_ec: int = Field(default=1000, ge=200)
    n_boot_hc: int = Field(default=2000, ge=1000)
    n_theta_gec: int = Field(default=10_000, gt=0)
    n_species_community: int = Field(default=30, gt=0)
    n_theta_ssd: int = Field(default=2000, gt=0)
    n_species_large: int = Field(default=4_000_000, gt=0)
    grid_points: int = Field(default=200, gt=1)
    x_levels: list[float] = [10.0, 50.0]
    gec_x: list[float] = [5.0, 50.0]
    hc_x_grid: list[float] = [1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 95.0]
    p: float = Field(default=5.0, gt=0, lt=100)
    gelman_rubin_threshold: float = 1.05
    allow_unconverged: bool = False
    output_dir: str = "output"
    seed: int = 0
    n_jobs: int = Field(default=1, gt=0)
    profile: Literal["full", "test"] = "full"

    @field_validator("x_levels", "gec_x", "hc_x_grid")
    @classmethod
    def _percent_levels(cls, values):
        for v in values:
            if not 0 < v < 100:
                raise ValueError(f"effect level {v} outside (0, 100)")
        return sorted(values)


class CurveFitRow(BaseModel):
    species: str
    contaminant: str
    b: float
    e: float
    d: float
    sigma: float
    ec10: Optional[float] = None
    ec10_lo: Optional[float] = None
    ec10_hi: Optional[float] = None
    ec50: Optional[float] = None
    ec50_lo: Optional[float] = None
    ec50_hi: Optional[float] = None
    converged: bool


class ClassicalSsdSummary(BaseModel):
    contaminant: str
    x: float
    p: float = 5.0
    mu_log10: float
    sigma_log10: float
    n: int
    hc5: float
    hc5_lo: float
    hc5_hi: float


class RunReport(BaseModel):
    contaminant: str
    config: dict
    curve_fits: list[CurveFitRow] = []
    classical_hc: list[ClassicalSsdSummary] = []
    hyperparameters: list[PriorPosteriorRow] = []
    gec: list[GecEstimate] = []
    hierarchical_hc: list[HcEstimate] = []
    hc5_vs_x: list[dict] = []
    global_response_at_hc: list[GlobalResponseEstimate] = []
    diagnostics: dict = {}
    notes: list[str] = []
    files: dict[str, str] = {}
