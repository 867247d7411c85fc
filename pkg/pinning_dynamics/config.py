# pinning_dynamics/config.py

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from pinning_dynamics.errors import CapacityError

# Capacity bounds. Every CapacityError names one of these.
DEFAULT_L_MAX = 12
DENSE_STATE_LIMIT = 20_000
DENSE_AUTO_LIMIT = 4_096
SIGMA_L_MAX = 14
PARTICLE_STATE_LIMIT = 500_000
TABLE_LENGTH_LIMIT = 50_000
EXACT_L_MAX = 12

EXPERIMENT_NAMES = (
    "identities",
    "spectra-small-L",
    "qsd",
    "metastability-mc",
    "sigma-scaling",
    "crossing-scaling",
    "particle-couplings",
    "censoring",
)


def default_ell(L: int) -> int:
    """Window parameter of the phases: max(1, round((log L)^{1/4}))."""
    if L <= 1:
        return 1
    return max(1, round(math.log(L) ** 0.25))


def default_c_o(lam: float) -> float:
    if lam == 1:
        return math.inf
    return 4.0 / abs(math.log(lam))


def zero_cap(L: int, c_o: Optional[float]) -> Optional[int]:
    """Largest admissible count c_o·log L, or None when uncapped."""
    if c_o is None or math.isinf(c_o):
        return None
    if L <= 1:
        return 0
    return int(math.floor(c_o * math.log(L)))


def check_capacity(bound_name: str, bound: int, requested: int, detail: str = ""):
    if requested > bound:
        raise CapacityError(bound_name, bound, requested, detail)


class Tolerances(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    detailed_balance: float = 1e-12
    antisymmetry: float = 1e-10
    monotonicity: float = 1e-10
    qsd_survival: float = 1e-8
    reflection: float = 1e-12
    normalization: float = 1e-12
    sign_band: float = 1e-10


class ExperimentConfig(BaseModel):
    """
    Validated parameters of one experiment run. Defaults that depend on
    other fields (ℓ per L, c_o per λ) are filled in by materialized().
    """

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    experiment: str
    L: List[int] = Field(default_factory=lambda: [4])
    lam: List[float] = Field(default_factory=lambda: [0.5], alias="lambda")
    seeds: List[int] = Field(default_factory=lambda: [0])
    runs: int = 100
    horizon: Optional[float] = None
    ell: Optional[int] = None
    c_o: Optional[float] = None
    L_max: int = DEFAULT_L_MAX
    dense_limit: int = DENSE_STATE_LIMIT
    tolerances: Tolerances = Field(default_factory=Tolerances)
    params: Dict[str, Any] = Field(default_factory=dict)
    out_dir: str = "results"
    format: Literal["csv", "json", "both"] = "both"
    timestamp: bool = True
    jobs: int = 1

    @field_validator("experiment")
    @classmethod
    def known_experiment(cls, value: str) -> str:
        if value not in EXPERIMENT_NAMES:
            raise ValueError(f"unknown experiment {value!r}; expected one of {', '.join(EXPERIMENT_NAMES)}")
        return value

    @field_validator("L")
    @classmethod
    def positive_lengths(cls, value: List[int]) -> List[int]:
        if not value or any(L < 1 for L in value):
            raise ValueError("L must be a non-empty list of integers >= 1")
        return value

    @field_validator("lam")
    @classmethod
    def positive_lambdas(cls, value: List[float]) -> List[float]:
        if not value or any(lam <= 0 for lam in value):
            raise ValueError("lambda must be a non-empty list of positive numbers")
        return value

    @field_validator("seeds")
    @classmethod
    def non_negative_seeds(cls, value: List[int]) -> List[int]:
        if any(s < 0 for s in value):
            raise ValueError("seeds must be non-negative")
        return value

    @model_validator(mode="after")
    def check_counts(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.ell is not None and self.ell < 1:
            raise ValueError("ell must be >= 1")
        if self.c_o is not None and self.c_o <= 0:
            raise ValueError("c_o must be positive")
        return self

    def ell_for(self, L: int) -> int:
        return self.ell if self.ell is not None else default_ell(L)

    def c_o_for(self, lam: float) -> float:
        return self.c_o if self.c_o is not None else default_c_o(lam)

    def materialized(self) -> Dict[str, Any]:
        """The config with every derived default written out."""
        data = self.model_dump(by_alias=True, exclude={"jobs", "out_dir", "format", "timestamp"})
        data["ell_used"] = {str(L): self.ell_for(L) for L in self.L}
        data["c_o_used"] = {repr(lam): _json_number(self.c_o_for(lam)) for lam in self.lam}
        return data

    def content_hash(self) -> str:
        """git blob SHA-1 of the canonical JSON of the materialized config."""
        return blob_hash(self.materialized())


def _json_number(value: float):
    if math.isinf(value):
        return "inf"
    return value


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


def blob_hash(data: Any) -> str:
    payload = canonical_json(data).encode("utf-8")
    header = f"blob {len(payload)}\0".encode("utf-8")
    return hashlib.sha1(header + payload).hexdigest()


def load_experiments(path: Path) -> Dict[str, Dict[str, Any]]:
    """Read the experiment file: a mapping from experiment name to its settings."""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    experiments = data.get("experiments", data)
    if not isinstance(experiments, dict):
        raise ValueError(f"{path}: expected an object of experiments")
    return experiments


def build_config(name: str, settings: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    merged = {"experiment": name, **settings}
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return ExperimentConfig.model_validate(merged)
