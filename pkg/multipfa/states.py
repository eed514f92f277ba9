"""
State Models for Multi-PFA
Defines the pydantic models passed between the data, fitting, inference and
factor stages, plus the pipeline state carried through the analyze graph.
"""

from datetime import datetime
from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ============== Enums ==============


class RunPhase(str, Enum):
    """Tracks the current phase of an analyze run."""

    INITIALIZING = "initializing"
    LOADING = "loading"
    NORMALIZING = "normalizing"
    FITTING = "fitting"
    INFERRING = "inferring"
    FACTORING = "factoring"
    REPORTING = "reporting"
    COMPLETE = "complete"
    FAILED = "failed"


class FitStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"


class FailReason(str, Enum):
    """Why a marginal fit was given up."""

    MAX_ITERATIONS = "max-iterations"
    SEPARATION = "separation-detected"
    SINGULAR_INFORMATION = "singular-information"
    STALLED = "stalled"
    INVALID_INPUT = "invalid-input"


class FactorEstimator(str, Enum):
    L1 = "l1"
    L2 = "l2"


class PValueKind(str, Enum):
    """Which p-values the rejection count R(t) is taken over."""

    RAW = "raw"
    ADJUSTED = "adjusted"


class ErrorKind(str, Enum):
    VALIDATION = "validation"
    IO = "io"
    INTERNAL = "internal"


# ============== Numeric containers ==============


class NumpyModel(BaseModel):
    """Base model that allows numpy arrays as field types."""

    model_config = ConfigDict(arbitrary_types_allowed=True)


class Dataset(NumpyModel):
    """A feature matrix with a nominal response coded 1..q."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray = Field(description="n x p matrix, rows are observational units")
    response: np.ndarray = Field(description="length-n integer codes in 1..q")
    q: int = Field(ge=2, description="Number of response categories")
    feature_names: list[str] = Field(description="length-p column labels")
    categories: list[str] = Field(
        default_factory=list, description="Original label of each code, index c-1"
    )
    baseline: int = Field(default=0, description="Baseline code; 0 means q")

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict) and "q" in data:
            data = dict(data)
            q = int(data["q"])
            if not data.get("baseline"):
                data["baseline"] = q
            if not data.get("categories"):
                data["categories"] = [str(c) for c in range(1, q + 1)]
        return data

    @model_validator(mode="after")
    def _check_labels(self) -> "Dataset":
        if not 1 <= self.baseline <= self.q:
            raise ValueError(f"baseline {self.baseline} outside 1..{self.q}")
        if len(self.categories) != self.q:
            raise ValueError("categories must name every code 1..q")
        return self

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def p(self) -> int:
        return int(self.features.shape[1])

    def pair_codes(self) -> list[int]:
        """Non-baseline codes in the order their pairs are reported."""
        return [c for c in range(1, self.q + 1) if c != self.baseline]

    def model_response(self) -> np.ndarray:
        """
        Response recoded so that the baseline becomes q and the other codes
        keep their relative order as 1..q-1.
        """
        order = self.pair_codes() + [self.baseline]
        recode = np.zeros(self.q + 1, dtype=np.int64)
        for new, old in enumerate(order, start=1):
            recode[old] = new
        return recode[np.asarray(self.response, dtype=np.int64)]

    def pair_label(self, c: int) -> str:
        """Label of the c-th baseline-category pair (c in 1..q-1)."""
        code = self.pair_codes()[c - 1]
        return f"{self.categories[code - 1]} vs {self.categories[self.baseline - 1]}"


class MarginalParams(NumpyModel):
    """Intercepts and slopes of one marginal baseline-category logit model."""

    alpha: np.ndarray = Field(description="length q-1 intercepts")
    beta: np.ndarray = Field(description="length q-1 slopes")

    @property
    def q(self) -> int:
        return len(self.alpha) + 1

    def stacked(self) -> np.ndarray:
        """(alpha_1, beta_1, ..., alpha_{q-1}, beta_{q-1})."""
        return np.column_stack([self.alpha, self.beta]).ravel()

    @classmethod
    def from_stacked(cls, theta: np.ndarray) -> "MarginalParams":
        pairs = np.asarray(theta, dtype=float).reshape(-1, 2)
        return cls(alpha=pairs[:, 0].copy(), beta=pairs[:, 1].copy())


class MarginalFit(NumpyModel):
    """Outcome of one marginal maximum likelihood fit."""

    params: Optional[MarginalParams] = None
    converged: bool = False
    iterations: int = 0
    grad_norm: float = float("inf")
    loglik: float = float("-inf")
    loglik_path: list[float] = Field(default_factory=list)
    fisher: Optional[np.ndarray] = None
    influence: Optional[np.ndarray] = None
    status: FitStatus = FitStatus.FAILED
    reason: Optional[FailReason] = None

    @property
    def ok(self) -> bool:
        return self.status == FitStatus.OK

    def diagnostics(self, feature: int, name: str) -> dict[str, Any]:
        """One JSON-lines diagnostics record."""
        return {
            "feature": feature,
            "name": name,
            "status": self.status.value,
            "reason": self.reason.value if self.reason else None,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "loglik": self.loglik,
        }


class CategoryInference(NumpyModel):
    """Joint inference for one baseline-category pair over all successful fits."""

    category: int
    index: np.ndarray = Field(description="original feature index of each column")
    active_mask: np.ndarray = Field(description="length-p, False where a fit failed")
    n: int
    beta_hat: np.ndarray
    sigma_hat: np.ndarray
    corr_hat: np.ndarray
    z: np.ndarray
    p_raw: np.ndarray

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma_hat) / self.n)

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Scatter a compact length-p' vector back to length p, NaN where masked."""
        out = np.full(self.active_mask.shape[0], np.nan)
        out[self.index] = values
        return out


class Spectrum(NumpyModel):
    """Eigenpairs of a correlation matrix, largest first."""

    values: np.ndarray
    vectors: np.ndarray = Field(description="columns are orthonormal eigenvectors")
    clamped_mass: float = Field(
        default=0.0, description="sum of |negative eigenvalues| set to zero"
    )


class FactorModel(NumpyModel):
    """Principal factor approximation of a Z-vector's correlation."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    k: int
    loadings: np.ndarray = Field(description="p' x k matrix b")
    a: np.ndarray = Field(description="length-p' scale factors")
    w_hat: np.ndarray = Field(description="length-k estimated factors")
    eta_hat: np.ndarray = Field(description="length-p' common component b W")
    estimator: FactorEstimator = FactorEstimator.L2
    eigen_clamped_mass: float = 0.0
    a_clamp_count: int = 0
    degenerate: bool = False
    converged: bool = True


# ============== Options ==============


class FitOptions(BaseModel):
    """Controls for the Newton-Raphson marginal fits."""

    max_iter: int = Field(default=100, ge=1)
    grad_tol: float = Field(default=1e-8, gt=0)
    loglik_rtol: float = Field(default=1e-12, gt=0)
    max_halvings: int = Field(default=30, ge=0)
    sep_bound: float = Field(default=30.0, gt=0)


class KPolicy(BaseModel):
    """Factor-count policy: an explicit k, or the eigenvalue-share threshold rule."""

    k: Optional[int] = Field(default=None, ge=0)
    tau: float = Field(default=0.01, gt=0, lt=1)

    @classmethod
    def explicit(cls, k: int) -> "KPolicy":
        return cls(k=k)

    @classmethod
    def threshold(cls, tau: float = 0.01) -> "KPolicy":
        return cls(tau=tau)

    @classmethod
    def parse(cls, value: str | int) -> "KPolicy":
        """Accept an integer or the string 'auto'."""
        if isinstance(value, str) and value.strip().lower() == "auto":
            return cls.threshold()
        return cls.explicit(int(value))


class PFAOptions(BaseModel):
    """Controls for the factor step and the threshold search."""

    k_policy: KPolicy = Field(default_factory=KPolicy.threshold)
    estimator: FactorEstimator = FactorEstimator.L1
    alpha: float = Field(default=0.05, gt=0, lt=1)
    grid_min: float = Field(default=1e-8, gt=0, lt=1)
    grid_max: float = Field(default=0.05, gt=0, lt=1)
    grid_points: int = Field(default=200, ge=1)
    count_kind: PValueKind = PValueKind.ADJUSTED
    keep_fraction: float = Field(default=0.95, gt=0, le=1)
    a_eps: float = Field(default=1e-6, gt=0)

    @model_validator(mode="after")
    def _check_grid(self) -> "PFAOptions":
        if self.grid_min > self.grid_max:
            raise ValueError("grid_min must not exceed grid_max")
        return self

    def grid(self) -> np.ndarray:
        if self.grid_points == 1:
            return np.array([self.grid_max])
        return np.logspace(
            np.log10(self.grid_min), np.log10(self.grid_max), self.grid_points
        )


# ============== Reports ==============


class ValidationFailure(BaseModel):
    invariant: str
    message: str
    locations: list[list[int]] = Field(default_factory=list)


class ValidationReport(BaseModel):
    """Per-invariant outcome of validate()."""

    failures: list[ValidationFailure] = Field(default_factory=list)
    category_counts: dict[str, int] = Field(default_factory=dict)
    constant_columns: list[int] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


class FdpReport(BaseModel):
    """Estimated FDP curve over a threshold grid."""

    grid: list[float]
    rejections: list[int]
    v_hat: list[float] = Field(description="numerator of the FDP estimator, before the min")
    fdp_hat: list[float]
    t_alpha: Optional[float] = None
    alpha: float
    pvalue_kind: PValueKind = PValueKind.ADJUSTED

    @field_validator("fdp_hat")
    @classmethod
    def _fdp_in_unit_interval(cls, v: list[float]) -> list[float]:
        if any(f < 0.0 or f > 1.0 for f in v):
            raise ValueError("FDP estimates must lie in [0, 1]")
        return v


class Counts(BaseModel):
    R: int
    V: Optional[int] = None
    S: Optional[int] = None


# ============== Pipeline State ==============


class ExecutionLog(BaseModel):
    """A log entry for tracking execution."""

    timestamp: datetime = Field(default_factory=datetime.now)
    phase: RunPhase
    stage: str
    message: str
    metadata: dict[str, Any] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Index of one CLI run; written as manifest.json."""

    command: str
    options: dict[str, Any]
    input_digest: Optional[str] = None
    seed: Optional[int] = None
    tool_version: str
    started_at: datetime
    completed_at: Optional[datetime] = None
    outputs: list[str] = Field(default_factory=list)
    status: str = "initialized"
    errors: list[str] = Field(default_factory=list)


class PipelineState(BaseModel):
    """Bookkeeping for an analyze run, carried in the graph state under 'run'."""

    current_phase: RunPhase = Field(default=RunPhase.INITIALIZING)
    status: str = Field(default="initialized")
    error_kind: Optional[ErrorKind] = None
    execution_logs: list[ExecutionLog] = Field(default_factory=list)
    errors: list[str] = Field(default_factory=list)
    started_at: datetime = Field(default_factory=datetime.now)
    completed_at: Optional[datetime] = None

    def log(self, phase: RunPhase, stage: str, message: str, **metadata):
        """Add a log entry."""
        self.current_phase = phase
        self.execution_logs.append(
            ExecutionLog(phase=phase, stage=stage, message=message, metadata=metadata)
        )

    def add_error(self, error: str):
        """Record an error."""
        self.errors.append(f"[{datetime.now().isoformat()}] {error}")

    def mark_complete(self):
        self.completed_at = datetime.now()
        self.current_phase = RunPhase.COMPLETE
        self.status = "DONE"

    def mark_failed(self, reason: str, kind: ErrorKind = ErrorKind.INTERNAL):
        self.completed_at = datetime.now()
        self.current_phase = RunPhase.FAILED
        self.status = "FAILED"
        self.error_kind = kind
        self.add_error(reason)

    @property
    def failed(self) -> bool:
        return self.status == "FAILED"


# ============== Simulation ==============


class SimConfig(BaseModel):
    """One Monte Carlo experiment over the two-scenario design."""

    model_config = ConfigDict(extra="forbid")

    scenario: int = Field(default=1, ge=1, le=2)
    n: int = Field(default=500, ge=5)
    p: int = Field(default=500, ge=1)
    p1: int = Field(default=10, ge=0)
    rho: float = Field(default=0.0, lt=1)
    beta_active: float = 1.0
    k: int = Field(default=10, ge=0)
    t_fixed: float = Field(default=1e-4, gt=0, lt=1)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    reps: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    estimator: FactorEstimator = FactorEstimator.L2
    count_kind: PValueKind = PValueKind.ADJUSTED
    keep_fraction: float = Field(default=0.95, gt=0, le=1)
    grid_min: float = Field(default=1e-8, gt=0, lt=1)
    grid_max: float = Field(default=0.05, gt=0, lt=1)
    grid_points: int = Field(default=200, ge=1)
    bootstrap: int = Field(default=1000, ge=1)

    @model_validator(mode="after")
    def _check_design(self) -> "SimConfig":
        if self.p1 > self.p:
            raise ValueError(f"p1={self.p1} exceeds p={self.p}")
        if self.scenario == 2:
            p0 = self.p - self.p1
            if p0 < 1:
                raise ValueError("scenario 2 needs at least one inactive feature")
            if p0 > 1 and self.rho <= -1.0 / (p0 - 1):
                raise ValueError(
                    f"rho={self.rho} gives a non-positive-definite equi-correlation "
                    f"matrix (need rho > {-1.0 / (p0 - 1):.6g})"
                )
        if self.k > self.p:
            raise ValueError(f"k={self.k} exceeds p={self.p}")
        return self

    def pfa_options(self) -> PFAOptions:
        return PFAOptions(
            k_policy=KPolicy.explicit(self.k),
            estimator=self.estimator,
            alpha=self.alpha,
            grid_min=self.grid_min,
            grid_max=self.grid_max,
            grid_points=self.grid_points,
            count_kind=self.count_kind,
            keep_fraction=self.keep_fraction,
        )


class RepetitionRecord(BaseModel):
    """Per-repetition, per-category outcome; one row of records.csv."""

    rep: int
    category: int
    fdp_hat: float
    R: int
    V: int
    S: int
    t_alpha: Optional[float] = None
    S_alpha: int = 0
    k: int
    failed_fits: int = 0


class SummaryRow(BaseModel):
    category: int
    median_fdp: float
    se_fdp: float = Field(ge=0)
    mean_R: float
    se_R: float = Field(ge=0)
    mean_S: float
    se_S: float = Field(ge=0)
    median_t_alpha: Optional[float] = None
    mean_S_alpha: float


class SummaryTable(BaseModel):
    """Across-repetition summary, one row per baseline-category pair."""

    alpha: float
    t_fixed: float
    reps: int
    rows: list[SummaryRow] = Field(default_factory=list)


# ============== Analyze run ==============


class AnalyzeOptions(BaseModel):
    """Resolved options of one analyze run."""

    input: str
    label: str
    baseline: Optional[str] = None
    tic: bool = False
    out: str
    fit: FitOptions = Field(default_factory=FitOptions)
    pfa: PFAOptions = Field(default_factory=PFAOptions)
    diagnostics: Optional[str] = None
    dump_corr: Optional[str] = Field(default=None, pattern="^(npy|csv)$")
    n_jobs: int = -1
    top: int = Field(default=10, ge=0)
