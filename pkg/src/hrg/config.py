"""Experiment configuration schema (JSON files validated with pydantic)."""

from __future__ import annotations

import hashlib
import json
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .disorder import Cauchy, CauchyConvolved, DensityModel, Gaussian, Mixture, tabulated
from .hierarchy import TAIL_CORRECTED, HoppingModel, Mode

EXPERIMENTS = ("spectrum", "rgflow", "greens", "fracmom", "ec", "ipr", "levelstats", "counting", "decoupling")
SWEEP_PARAMETERS = ("energy", "c", "sigma", "n", "s", "eps")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class HoppingSpec(_Strict):
    kind: Literal["geometric", "explicit"] = "geometric"
    eps: Optional[float] = 1.0
    c: Optional[float] = 1.0
    values: Optional[list[float]] = None

    @field_validator("c")
    @classmethod
    def _summable(cls, v):
        if v is not None and not v > 0:
            raise ValueError(f"c={v} must be positive: the hopping sequence p_r = eps 2^(-c r) must be summable")
        return v

    @field_validator("eps")
    @classmethod
    def _positive(cls, v):
        if v is not None and not v > 0:
            raise ValueError(f"eps={v} must be positive")
        return v

    @model_validator(mode="after")
    def _explicit_values(self):
        if self.kind == "explicit" and not self.values:
            raise ValueError("explicit hopping needs a non-empty 'values' list")
        return self

    def build(self, n: int) -> HoppingModel:
        if self.kind == "geometric":
            return HoppingModel.geometric(self.eps, self.c, n)
        return HoppingModel.explicit(self.values, n, eps=self.eps, c=self.c)


class DensitySpec(_Strict):
    kind: Literal["gaussian", "cauchy", "mixture", "cauchy_convolved", "tabulated"] = "gaussian"
    mu: float = 0.0
    sigma: float = 1.0
    components: Optional[list["MixtureComponent"]] = None
    base: Optional["DensitySpec"] = None
    z: Optional[tuple[float, float]] = None
    values: Optional[list[float]] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    tail_mass: float = 0.0

    @field_validator("sigma")
    @classmethod
    def _sigma(cls, v):
        if not v > 0:
            raise ValueError("sigma must be positive")
        return v

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "mixture" and not self.components:
            raise ValueError("mixture needs 'components'")
        if self.kind == "cauchy_convolved":
            if self.base is None or self.z is None:
                raise ValueError("cauchy_convolved needs 'base' and 'z'")
            if not self.z[1] > 0:
                raise ValueError("z must have positive imaginary part")
        if self.kind == "tabulated" and (self.values is None or self.lo is None or self.hi is None):
            raise ValueError("tabulated needs 'values', 'lo' and 'hi'")
        return self

    def build(self) -> DensityModel:
        if self.kind == "gaussian":
            return Gaussian(self.mu, self.sigma)
        if self.kind == "cauchy":
            return Cauchy(self.mu, self.sigma)
        if self.kind == "mixture":
            return Mixture(tuple((c.weight, c.density.build()) for c in self.components))
        if self.kind == "cauchy_convolved":
            return CauchyConvolved(self.base.build(), complex(*self.z))
        return tabulated(self.values, self.lo, self.hi, self.tail_mass)


class MixtureComponent(_Strict):
    weight: float = Field(ge=0)
    density: DensitySpec


DensitySpec.model_rebuild()


class SweepSpec(_Strict):
    parameter: Literal["energy", "c", "sigma", "n", "s", "eps"]
    values: list[float] = Field(min_length=1)
    experiment: Literal["spectrum", "rgflow", "greens", "fracmom", "ec", "ipr", "levelstats", "counting", "decoupling"]


class ExperimentConfig(_Strict):
    experiment: Literal["spectrum", "rgflow", "greens", "fracmom", "ec", "ipr", "levelstats", "counting",
                        "decoupling", "sweep"]
    hopping: HoppingSpec = HoppingSpec()
    density: DensitySpec = DensitySpec()
    n: int = Field(6, ge=0, le=30)
    m: Optional[int] = Field(None, ge=0)
    mode: Literal["tail_corrected", "truncated"] = "tail_corrected"
    energy: float = 0.0
    energies: Optional[list[float]] = None
    interval: Optional[tuple[float, float]] = None
    window: tuple[float, float] = (-100.0, 100.0)
    s: float = Field(0.5, gt=0, lt=1)
    q: float = Field(2.0, ge=0.5)
    W: float = Field(4.0, gt=0)
    eps_ipr: float = Field(0.5, gt=0)
    z: tuple[float, float] = (0.0, 1.0)
    k: int = Field(2, ge=1)
    k_list: Optional[list[int]] = None
    realizations: int = Field(100, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    r_max: int = Field(10, ge=1)
    method: Literal["grid", "mc"] = "grid"
    samples: int = Field(10**5, ge=100)
    bins: int = Field(4096, ge=16)
    sizes: Optional[list[float]] = None
    sub_window: float = Field(1.0, gt=0)
    n_values: Optional[list[int]] = None
    thresholds: dict[str, float] = Field(default_factory=dict)
    sweep: Optional[SweepSpec] = None
    output: Optional[str] = None

    @model_validator(mode="after")
    def _consistency(self):
        if self.m is not None and self.m > self.n:
            raise ValueError(f"truncation m={self.m} exceeds n={self.n}")
        if self.experiment == "sweep" and self.sweep is None:
            raise ValueError("sweep experiment needs a 'sweep' block")
        if self.interval is not None and not self.interval[0] < self.interval[1]:
            raise ValueError("interval must satisfy lo < hi")
        if not self.window[0] < self.window[1]:
            raise ValueError("window must satisfy lo < hi")
        if not self.z[1] > 0:
            raise ValueError("z must have positive imaginary part")
        return self

    def hopping_model(self, n: int | None = None) -> HoppingModel:
        return self.hopping.build(self.n if n is None else n)

    def density_model(self) -> DensityModel:
        return self.density.build()

    def operator_mode(self) -> Mode:
        if self.mode == "tail_corrected":
            return TAIL_CORRECTED
        return Mode(self.n if self.m is None else self.m)

    def threshold(self, name: str, default: float) -> float:
        return float(self.thresholds.get(name, default))

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", exclude={"output"}), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_updates(self, **updates: Any) -> "ExperimentConfig":
        data = self.model_dump(mode="python")
        data.update(updates)
        return ExperimentConfig.model_validate(data)


def load_config(text: str | bytes | dict) -> ExperimentConfig:
    data = text if isinstance(text, dict) else json.loads(text)
    return ExperimentConfig.model_validate(data)


def format_validation_error(exc) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid config:\n" + "\n".join(lines)
