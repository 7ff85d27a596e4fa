"""Run configuration files (TOML) validated before any computation.

Unknown keys are rejected everywhere. Relative paths are resolved against
the directory of the configuration file.
"""
from __future__ import annotations

import hashlib
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .inference.annealing import AnnealSchedule
from .inference.priors import LONG_RUN_SETTINGS, PRESETS, RW_NAMES, McmcSettings, PriorConfig
from .model import ParamVector
from .simulate import Gp3Config, GqnConfig

# mass scale shipped with a prior preset
PRESET_SCALE_C = {"sea": 0.25}


class ConfigError(ValueError):
    pass


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamsSection(Strict):
    alpha: float = 0.5
    beta: float = 0.5
    sigma2: float = 1.0
    sigma2_theta: float = 1.0
    sigma2_p: float = 1.0
    eta1: float = 1.0
    eta2: float = 1.0
    eta3: float = 1.0

    @model_validator(mode="after")
    def _valid(self):
        self.to_params()
        return self

    def to_params(self) -> ParamVector:
        return ParamVector(**self.model_dump())


class SimulationSection(Strict):
    n: int = Field(ge=1)
    T: int = Field(ge=1)
    dt: float = Field(1.0, gt=0)
    domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    scale_c: float = Field(1.0, gt=0)


class Gp3Section(Strict):
    b0: List[float] = [0.0, 10.0, 20.0]
    sigma2_eps: List[float] = [1.0, 0.01, 2.0]
    a: List[float] = [-0.75, 0.75, 0.25]
    kappa: List[float] = [1.0, 1.5, 2.0]
    sigma2: List[float] = [1.0, 2.0, 0.2]
    mix_p: List[float] = [1 / 3, 1 / 3, 1 / 3]
    matern_smoothness: float = 2.0

    @model_validator(mode="after")
    def _valid(self):
        self.to_config()
        return self

    def to_config(self) -> Gp3Config:
        d = self.model_dump()
        return Gp3Config(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class GqnSection(Strict):
    coef_sd: float = 0.001
    mix_threshold: float = 0.6
    mix_offset: float = 5.0
    kernel_decay: float = 1.0
    per_location_u: bool = False

    @model_validator(mode="after")
    def _valid(self):
        self.to_config()
        return self

    def to_config(self) -> GqnConfig:
        return GqnConfig(**self.model_dump())


class DataSection(Strict):
    locations: str
    y: str
    x: Optional[str] = None
    scale_c: Optional[float] = Field(None, gt=0)


class PriorsSection(Strict):
    preset: Optional[Literal["gp3", "gqn", "alaska", "sea"]] = None
    sd_alpha_star: Optional[float] = None
    sd_beta_star: Optional[float] = None
    ig_v: Optional[Tuple[float, float]] = None
    ig_theta: Optional[Tuple[float, float]] = None
    ig_p: Optional[Tuple[float, float]] = None
    mu_eta1: Optional[float] = None
    mu_eta2: Optional[float] = None
    mu_eta3: Optional[float] = None
    eta3_mode: Optional[Literal["sample", "fixed"]] = None
    eta3_value: Optional[float] = None

    @model_validator(mode="after")
    def _valid(self):
        self.to_priors()
        return self

    def to_priors(self) -> PriorConfig:
        base = PRESETS[self.preset] if self.preset else PriorConfig()
        over = {k: v for k, v in self.model_dump(exclude={"preset"}).items() if v is not None}
        return replace(base, **over)


class McmcSection(Strict):
    preset: Optional[Literal["default", "long"]] = None
    iterations: Optional[int] = None
    burn_in: Optional[int] = None
    thin: Optional[int] = None
    rw_scales: Optional[Dict[str, float]] = None
    adapt: Optional[bool] = None
    keep_latent: Optional[bool] = None
    latent_update: Optional[Literal["exact", "transition"]] = None
    scheme: Optional[Literal["collapsed", "gibbs"]] = None
    init_search: Optional[bool] = None
    target_accept: Optional[float] = Field(None, gt=0, lt=1)

    @field_validator("rw_scales")
    @classmethod
    def _known(cls, v):
        if v is not None:
            bad = sorted(set(v) - set(RW_NAMES))
            if bad:
                raise ValueError(f"unknown random-walk blocks {bad}; allowed {list(RW_NAMES)}")
        return v

    @model_validator(mode="after")
    def _valid(self):
        self.to_settings(0)
        return self

    def to_settings(self, seed: int) -> McmcSettings:
        base = LONG_RUN_SETTINGS if self.preset == "long" else McmcSettings()
        over = {k: v for k, v in self.model_dump(exclude={"preset"}).items() if v is not None}
        return replace(base, seed=seed, **over)


class AnnealSection(Strict):
    steps: int = Field(500, ge=0)
    t0: float = Field(1.0, gt=0)
    ratio: float = Field(0.95, gt=0, le=1)
    step_size: float = Field(1.0, gt=0)
    init_eta3: Optional[float] = Field(None, gt=0)

    def to_schedule(self, seed: int) -> AnnealSchedule:
        return AnnealSchedule(**self.model_dump(), seed=seed)


class Common(Strict):
    seed: int = Field(0, ge=0)
    output: Optional[str] = None
    overwrite: bool = True


class GenerateConfig(Common):
    simulation: SimulationSection
    params: ParamsSection = ParamsSection()
    gp3: Gp3Section = Gp3Section()
    gqn: GqnSection = GqnSection()


class FitConfig(Common):
    data: DataSection
    priors: PriorsSection = PriorsSection()
    mcmc: McmcSection = McmcSection()
    anneal: AnnealSection = AnnealSection()


class PredictSection(Strict):
    chain: str
    horizon: int = Field(1, ge=1)
    level: float = Field(0.95, ge=0, lt=1)
    reconstruct: Optional[str] = None


class PredictConfig(Common):
    predict: PredictSection
    data: Optional[DataSection] = None


class CorrSection(Strict):
    generators: List[Literal["hamiltonian", "se_gp", "matern32_gp", "matern52_gp"]] = [
        "hamiltonian",
        "se_gp",
        "matern32_gp",
        "matern52_gp",
    ]
    reps: int = Field(1000, ge=2)
    n: int = Field(10, ge=2)
    T: int = Field(4, ge=1)
    params: ParamsSection = ParamsSection(alpha=0.9, beta=0.9)


class LagSection(Strict):
    space_bins: List[float]
    time_lags: List[int]
    min_pairs: int = Field(30, ge=1)


class StationaritySection(Strict):
    c0: float = Field(0.5, gt=0)
    prior: Tuple[float, float] = (1.0, 1.0)


class DiagnoseConfig(Common):
    data: Optional[DataSection] = None
    corr: CorrSection = CorrSection()
    lag: Optional[LagSection] = None
    stationarity: StationaritySection = StationaritySection()


def _fmt_errors(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config(path, model: type[Strict]):
    """Parse and validate; returns (config, sha256 of the file bytes, base directory)."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from None
    try:
        cfg = model.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"{path}: {_fmt_errors(e)}") from None
    return cfg, hashlib.sha256(raw).hexdigest(), path.resolve().parent
