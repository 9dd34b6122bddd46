"""Request and response models for the HTTP service.

Everything travels inline: panels, chains and reports are CSV or JSON
strings inside the JSON body, so the service stays stateless and the
client owns all file handling. Floats serialize at full precision (repr
round-trip), which keeps CSV artifacts produced through the service
bitwise identical to ones produced by calling the library directly.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..backtest import BacktestConfig

_DAILY = 1.0 / 252.0


class BacktestSettings(BaseModel):
    """Wire form of the backtest accounting configuration."""

    model_config = ConfigDict(extra="forbid")

    tc_rate: float = 0.001
    periods_per_year: int = 252
    initial_wealth: float = 1.0
    charge_initial_acquisition: bool = False

    def to_config(self) -> BacktestConfig:
        return BacktestConfig(tc_rate=self.tc_rate,
                              periods_per_year=self.periods_per_year,
                              initial_wealth=self.initial_wealth,
                              charge_initial_acquisition=self.charge_initial_acquisition)


class PanelRequest(BaseModel):
    """Base for requests that carry a returns panel and optional extras."""

    model_config = ConfigDict(extra="forbid")

    returns_csv: str
    characteristics_csv: Optional[str] = None
    membership_csv: Optional[str] = None
    settings: BacktestSettings = Field(default_factory=BacktestSettings)


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_assets: int = 10
    years: float = 1.0
    dt: float = _DAILY
    seed: int = 0
    drift: float = 0.05
    vol: float = 0.2
    x0: Optional[list[float]] = None
    cap_spread: float = 1.5       # x0 = cap_spread ** (0..n-1) when x0 is omitted
    premium: Optional[float] = None   # daily return bonus for the smallest cap
    start_year: int = 2000
    emit_panel: bool = True


class SimulateResponse(BaseModel):
    path_csv: str
    returns_csv: Optional[str] = None
    characteristics_csv: Optional[str] = None
    n_assets: int
    n_steps: int


class BacktestSummary(BaseModel):
    terminal_wealth: float
    annualized_return_pct: Optional[float] = None
    sharpe: Optional[float] = None
    total_turnover: float
    total_cost: float
    bankrupt: bool
    n_days: int


class BacktestRequest(PanelRequest):
    strategy: str = "ewp"
    artifact_json: Optional[str] = None   # inline investment-map posterior


class BacktestResponse(BaseModel):
    wealth_csv: str
    summary: BacktestSummary


class DwpGridRequest(PanelRequest):
    lo: float = -8.0
    hi: float = 8.0
    mesh: float = 0.05


class SkippedPoint(BaseModel):
    p: float
    reason: str


class DwpGridResponse(BaseModel):
    p_star: float
    best_value: float
    grid_points: int
    evaluated: int
    skipped: list[SkippedPoint] = Field(default_factory=list)
    values_csv: str


class DwpMhRequest(PanelRequest):
    iterations: int = 10_000
    burn_in: int = 5_000
    proposal_std: float = 0.5
    lo: float = -8.0
    hi: float = 8.0
    initial_p: float = 0.0
    seed: int = 0
    a: float = 7.0                # performance likelihood mean
    b: float = 0.5                # performance likelihood standard deviation
    auto_start: bool = True       # coarse-scan a feasible start if p0 fails


class DwpMhResponse(BaseModel):
    chain_csv: str
    summary: dict


class GpLearnRequest(PanelRequest):
    chars: str = "log:mu"         # '+'-separated channel specs
    grid_sizes: Optional[str] = None   # e.g. "64" or "32x32"
    iterations: int = 2_000
    burn_in: int = 1_000
    seed: int = 0
    a: float = 7.0
    b: float = 0.5


class GpLearnResponse(BaseModel):
    artifact_json: str
    map_csv: str
    summary: dict


class VerifyMasterRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path_csv: str
    generator: str = "entropy"
    vol: Optional[float] = None           # sigma = vol * I when given
    sigma: Optional[list[list[float]]] = None
    covariance: Literal["model", "realized"] = "model"
    coarsen: list[int] = Field(default_factory=lambda: [1])


class DecompositionRow(BaseModel):
    dt: float
    lhs: float
    g_term: float
    drift_integral: float
    covariate_integral: float
    residual: float


class VerifyMasterResponse(BaseModel):
    rows: list[DecompositionRow]
    csv: str
    max_abs_residual: float


class ExperimentRequest(PanelRequest):
    strategies: list[str] = Field(min_length=1)
    train_years: int = 10
    test_years: int = 5
    roll_step_years: int = 1
    start_year: Optional[int] = None
    seed: int = 0


class ExperimentResponse(BaseModel):
    experiment_json: str
    summary_csv: str
    n_folds: int


class ReportRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["summary", "folds", "histogram", "map-band"]
    experiment_json: Optional[str] = None
    chain_csv: Optional[str] = None
    artifact_json: Optional[str] = None
    samples: Optional[list[float]] = None
    bins: int = 40
    lo: Optional[float] = None
    hi: Optional[float] = None


class ReportResponse(BaseModel):
    csv: str


class HealthResponse(BaseModel):
    status: str
    package: str
    version: str


class ErrorPayload(BaseModel):
    """Shape of the JSON body returned for library-level failures."""

    error: str
    detail: str
    exit_code: int
