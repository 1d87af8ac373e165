"""Declarative experiment description and the built-in presets."""

from __future__ import annotations

import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .kernels import CdfMode, constellation_by_name

CSIR_ALGORITHMS = ("mf-qvb", "lmmse-qvb", "conv-qvb", "map-oracle")
JED_ALGORITHMS = ("mf-qvb-jed", "lmmse-qvb-jed", "conv-qvb-jed")
ALGORITHMS = CSIR_ALGORITHMS + JED_ALGORITHMS


class ChannelSpec(BaseModel):
    """``iid`` Rayleigh, or Laplacian angular spread around a random mean angle."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["iid", "laplacian"] = "iid"
    spread_deg: float = Field(10.0, gt=0.0, lt=90.0)
    aoa_range_deg: tuple[float, float] = (-60.0, 60.0)

    @field_validator("aoa_range_deg")
    @classmethod
    def _ordered(cls, v):
        if not v[0] <= v[1]:
            raise ValueError("aoa_range_deg must be (low, high) with low <= high")
        return v

    @property
    def label(self) -> str:
        if self.kind == "iid":
            return "iid"
        return f"laplacian-{self.spread_deg:g}deg"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(ge=1)
    M: int = Field(ge=1)
    t_p: int | None = Field(None, ge=1)
    t_d: list[int] = Field(default_factory=lambda: [100], min_length=1)
    bits: list[int] = Field(min_length=1)
    constellation: str = "qpsk"
    channel: ChannelSpec = ChannelSpec()
    snr_db: list[float] = Field(min_length=1)
    algorithms: list[str] = Field(min_length=1)
    trials: int = Field(ge=1)
    seed: int = Field(0, ge=0, lt=2**63)
    cdf_mode: CdfMode = CdfMode.LOGISTIC_PLUGIN
    lite: bool = True
    max_iters: int = Field(50, ge=1)
    step_size: float | None = Field(None, gt=0.0)

    @field_validator("t_d", "bits", mode="before")
    @classmethod
    def _listify(cls, v):
        return [v] if isinstance(v, int) else v

    @field_validator("snr_db", mode="before")
    @classmethod
    def _listify_snr(cls, v):
        return [v] if isinstance(v, (int, float)) else v

    @field_validator("t_d")
    @classmethod
    def _positive_td(cls, v):
        if any(t < 1 for t in v):
            raise ValueError("every t_d must be at least 1")
        return v

    @field_validator("bits")
    @classmethod
    def _bits_range(cls, v):
        if any(not 1 <= b <= 12 for b in v):
            raise ValueError("every bit width must lie in 1..12")
        return v

    @field_validator("constellation")
    @classmethod
    def _known_constellation(cls, v):
        constellation_by_name(v)
        return v

    @field_validator("algorithms")
    @classmethod
    def _known_algorithms(cls, v):
        bad = [a for a in v if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithm(s) {bad}; choose from {list(ALGORITHMS)}")
        if len(set(v)) != len(v):
            raise ValueError("algorithms must not repeat")
        return v

    @model_validator(mode="after")
    def _pilots(self):
        if self.t_p is None:
            object.__setattr__(self, "t_p", 2 * self.K)
        if any(a in JED_ALGORITHMS for a in self.algorithms) and self.t_p < self.K:
            raise ValueError(f"t_p={self.t_p} is shorter than K={self.K}")
        return self


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("line 1: the config must be a JSON object")
    return parse_config(data)


# reduced-count versions of the six figure experiments
_CORR = {"kind": "laplacian", "spread_deg": 10.0}
PRESETS: dict[str, dict] = {
    "fig-detect-iid": dict(K=16, M=32, bits=[3], constellation="qpsk", snr_db=[0, 10, 20, 30],
                           algorithms=["mf-qvb", "lmmse-qvb", "conv-qvb"], trials=2000),
    "fig-detect-corr": dict(K=16, M=64, bits=[3], constellation="16qam", channel=_CORR,
                            snr_db=[0, 10, 20, 30], algorithms=["mf-qvb", "lmmse-qvb", "conv-qvb"],
                            trials=2000),
    "fig-jed-iid": dict(K=16, M=32, bits=[3], constellation="qpsk", snr_db=[0, 10, 20, 30],
                        algorithms=list(JED_ALGORITHMS), trials=2000),
    "fig-jed-corr": dict(K=16, M=64, bits=[3], constellation="16qam", channel=_CORR,
                         snr_db=[0, 10, 20, 30], algorithms=list(JED_ALGORITHMS), trials=2000),
    "fig-ser-vs-td": dict(K=16, M=64, bits=[3], constellation="16qam", channel=_CORR,
                          t_d=[20, 50, 100], snr_db=[20],
                          algorithms=["mf-qvb-jed", "lmmse-qvb-jed"], trials=2000),
    "fig-ser-vs-bits": dict(K=16, M=64, bits=[1, 2, 3, 4, 5], constellation="16qam", channel=_CORR,
                            snr_db=[0, 10, 20, 30], algorithms=["mf-qvb-jed", "lmmse-qvb-jed"],
                            trials=2000),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    data = dict(PRESETS[name])
    data.update(overrides)
    return parse_config(data)
