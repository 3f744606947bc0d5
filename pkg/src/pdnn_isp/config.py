"""Run configuration: a YAML document with imaging, scenario, solver and output sections.

Unknown keys are rejected with their full key path. Every optional key has
a default, so ``RunConfig()`` is a complete Austria run at the reference
geometry.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .geometry import DEFAULT_SOURCE_AMPLITUDE, ImagingConfig, make_config


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ImagingSection(_Section):
    frequency: float = 4e9
    doi: float = 0.15
    grid: int = 64
    n_tx: int = 36
    n_rx: int = 36
    tx_radius: Optional[float] = None       # default: 20 wavelengths
    rx_radius: Optional[float] = None
    source_amplitude: float = DEFAULT_SOURCE_AMPLITUDE
    data_grid: Optional[int] = None          # finer grid for data generation


class ScenarioSection(_Section):
    preset: Optional[str] = "austria"
    shapes: Optional[list] = None
    snr_db: Optional[float] = None
    noise_seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _one_source(cls, data):
        if isinstance(data, dict) and data.get("shapes") is not None:
            if data.get("preset") is not None:
                raise ValueError("give either scenario.preset or scenario.shapes, not both")
            data = {**data, "preset": None}
        return data


class RegionSection(_Section):
    enabled: bool = True
    delta: float = 3.0
    r: int = 3
    sort: Literal["asc", "desc"] = "asc"


class NetworkSection(_Section):
    conv_channels: tuple = (32, 64, 64)
    n_res_blocks: int = 3
    hidden: int = 256
    pool_grid: int = 4


class BimSection(_Section):
    outer_iters: int = 10
    tikhonov_lambda: float = 1e-2


class SolverSection(_Section):
    method: Literal["pdnn", "bp", "bim"] = "pdnn"
    alpha: float = Field(2.2, ge=0)
    beta: float = Field(0.6, ge=0)
    iterations: int = Field(3000, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    input: Literal["bp", "ones", "zeros", "file"] = "bp"
    input_map: Optional[str] = None
    seed: int = 0
    stop_window: int = 100
    stop_tol: float = 1e-6
    linear_solver: Literal["lu", "bicgstab"] = "lu"
    snapshot_every: int = 0
    region: RegionSection = RegionSection()
    network: NetworkSection = NetworkSection()
    bim: BimSection = BimSection()


class OutputSection(_Section):
    directory: str = "out"
    formats: tuple = ("csv", "png")
    re_range: tuple = (1.0, 3.0)
    im_range: tuple = (0.0, 1.5)


class FresnelSection(_Section):
    path: Optional[str] = None
    freq_index: int = 0
    doi: float = 0.15
    grid: int = 32


class SweepSection(_Section):
    parameter: Optional[str] = None          # dotted key, e.g. solver.alpha
    values: list = []
    scenarios: list = []
    seeds: list = [0]


class RunConfig(_Section):
    imaging: ImagingSection = ImagingSection()
    scenario: ScenarioSection = ScenarioSection()
    solver: SolverSection = SolverSection()
    output: OutputSection = OutputSection()
    fresnel: FresnelSection = FresnelSection()
    sweep: SweepSection = SweepSection()

    def imaging_config(self) -> ImagingConfig:
        im = self.imaging
        return make_config(im.frequency, im.doi, im.grid, im.n_tx, im.n_rx, im.tx_radius,
                           im.rx_radius, source_amplitude=im.source_amplitude)

    def scenario_hash(self) -> str:
        """Digest of everything that determines the measured data."""
        key = {"imaging": self.imaging.model_dump(), "scenario": self.scenario.model_dump()}
        return hashlib.sha256(json.dumps(key, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def with_value(self, dotted: str, value) -> "RunConfig":
        """Copy with one dotted key replaced (validated like a loaded file)."""
        data = self.model_dump()
        node = data
        parts = dotted.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
        return from_dict(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(json.loads(self.model_dump_json()), sort_keys=False)


def from_dict(data: dict | None) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            path = ".".join(str(p) for p in err["loc"])
            msg = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
            msgs.append(f"{path}: {msg}")
        raise ConfigError("invalid run config: " + "; ".join(msgs)) from None


def load_config(path: Union[str, Path, None]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data)
