"""YAML experiment configuration with strict key checking.

Every section is optional; absent keys take the defaults below.  Unknown
keys are rejected so that a mistyped tuning parameter cannot silently fall
back to its default.

.. code-block:: yaml

    workspace: {center: [0, 0, 0], side: 0.2}
    epm: {count: 2, moment: 70.0, plane_offset: 0.15, half_extent: null}
    sensing: {n: 20, mag_std: 1.0e-6, accel_std: 0.01}
    ekf: {p0_diag: [0.01, 0.01, 0.01, 0.5, 0.5, 0.5], q_diag: 1.0e-8}
    sim: {trials: 100, max_iterations: 1000, seed: 0}
    whitening: {mode: noise}
    obsmap: {trials: 10, plane: xz, grid: 21}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .ekf import FilterParams
from .magnetics import DEFAULT_MOMENT, PhysicalConstants
from .observability import PLANES, Whitening
from .scenario import ConvergenceCriteria, SceneSpec, Workspace
from .sensing import MIN_CONFIGS, NoiseSpec


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class WorkspaceSection:
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    side: float = 0.2


@dataclass
class EpmSection:
    count: int = 2
    moment: float = DEFAULT_MOMENT
    plane_offset: float = 0.15
    half_extent: float | None = None


@dataclass
class SensingSection:
    n: int = 20
    mag_std: float = 1e-6
    accel_std: float = 0.01
    gyro_bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    gyro_std: float = 0.0
    norm_from_noisy_fields: bool = True
    gravity: list = field(default_factory=lambda: [0.0, 0.0, -9.81])


@dataclass
class EkfSection:
    p0_diag: list = field(default_factory=lambda: [0.01, 0.01, 0.01, 0.5, 0.5, 0.5])
    q_diag: float | list = 1e-8
    mag_std: float = 1e-6
    accel_std: float = 0.01
    norm_scale: float = 1.0
    timestep: float = 1.0
    block_diagonal: bool = False


@dataclass
class SimSection:
    trials: int = 100
    max_iterations: int = 1000
    pos_tol: float = 0.005
    orient_tol: float = 0.1
    hold_steps: int = 150
    seed: int = 0
    stop_on_convergence: bool = True


@dataclass
class WhiteningSection:
    mode: str = "noise"  # noise | rows | none
    mag_std: float = 1e-6
    accel_std: float = 0.01
    position_scale: float = 0.005
    orientation_scale: float = math.sqrt(0.1)


@dataclass
class ObsmapSection:
    trials: int = 10
    plane: str = "xz"
    grid: int = 21


SECTIONS = {
    "workspace": WorkspaceSection,
    "epm": EpmSection,
    "sensing": SensingSection,
    "ekf": EkfSection,
    "sim": SimSection,
    "whitening": WhiteningSection,
    "obsmap": ObsmapSection,
}


@dataclass
class ExperimentConfig:
    workspace: WorkspaceSection = field(default_factory=WorkspaceSection)
    epm: EpmSection = field(default_factory=EpmSection)
    sensing: SensingSection = field(default_factory=SensingSection)
    ekf: EkfSection = field(default_factory=EkfSection)
    sim: SimSection = field(default_factory=SimSection)
    whitening: WhiteningSection = field(default_factory=WhiteningSection)
    obsmap: ObsmapSection = field(default_factory=ObsmapSection)

    # -- builders for the library objects -----------------------------------

    def scene(self) -> SceneSpec:
        return SceneSpec(
            m=self.epm.count,
            n=self.sensing.n,
            workspace=Workspace(tuple(self.workspace.center), self.workspace.side),
            plane_offset=self.epm.plane_offset,
            half_extent=self.epm.half_extent,
            moment=self.epm.moment,
            constants=PhysicalConstants(gravity=tuple(self.sensing.gravity)),
        )

    def noise(self) -> NoiseSpec:
        s = self.sensing
        return NoiseSpec(s.mag_std, s.accel_std, tuple(s.gyro_bias), s.gyro_std, s.norm_from_noisy_fields)

    def filter_params(self) -> FilterParams:
        e = self.ekf
        q = np.broadcast_to(np.asarray(e.q_diag, dtype=float), (6,))
        return FilterParams(
            process_noise=np.diag(q),
            initial_covariance=np.diag(np.asarray(e.p0_diag, dtype=float)),
            timestep=e.timestep,
            mag_std=e.mag_std,
            accel_std=e.accel_std,
            norm_scale=e.norm_scale,
            block_diagonal=e.block_diagonal,
        )

    def criteria(self) -> ConvergenceCriteria:
        s = self.sim
        return ConvergenceCriteria(s.pos_tol, s.orient_tol, s.hold_steps, s.max_iterations)

    def whitening_rule(self) -> Whitening:
        w = self.whitening
        if w.mode == "none":
            return Whitening.none()
        if w.mode == "rows":
            return Whitening.rows_only(w.mag_std, w.accel_std)
        return Whitening(w.mag_std, w.accel_std, self.ekf.norm_scale, w.position_scale, w.orientation_scale)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_type(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected true/false", path)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError("expected an integer", path)
        return value
    if isinstance(default, float):
        if isinstance(value, list):
            return [_check_type(v, default, f"{path}[{i}]") for i, v in enumerate(value)]
        if not _is_number(value):
            raise ConfigError("expected a number", path)
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigError("expected a list of numbers", path)
        return [float(v) for v in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError("expected a string", path)
        return value
    # optional float (default None)
    if value is not None and not _is_number(value):
        raise ConfigError("expected a number or null", path)
    return None if value is None else float(value)


def from_dict(data: dict | None) -> ExperimentConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    cfg = ExperimentConfig()
    for name, section in data.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section (expected one of {sorted(SECTIONS)})", name)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError("section must be a mapping", name)
        target = getattr(cfg, name)
        known = {f.name for f in fields(target)}
        for key, value in section.items():
            path = f"{name}.{key}"
            if key not in known:
                raise ConfigError(f"unknown key (expected one of {sorted(known)})", path)
            setattr(target, key, _check_type(value, getattr(target, key), path))
    validate(cfg)
    return cfg


def _positive(value, path):
    if not value > 0:
        raise ConfigError("must be positive", path)


def _length(value, k, path):
    if len(value) != k:
        raise ConfigError(f"expected {k} values, got {len(value)}", path)


def validate(cfg: ExperimentConfig) -> None:
    _length(cfg.workspace.center, 3, "workspace.center")
    _positive(cfg.workspace.side, "workspace.side")
    if not 1 <= cfg.epm.count <= 6:
        raise ConfigError("must be between 1 and 6 (one EPM per cube face)", "epm.count")
    _positive(cfg.epm.moment, "epm.moment")
    _positive(cfg.epm.plane_offset, "epm.plane_offset")
    if cfg.epm.half_extent is not None:
        _positive(cfg.epm.half_extent, "epm.half_extent")
    if cfg.sensing.n < MIN_CONFIGS:
        raise ConfigError(
            f"must be at least {MIN_CONFIGS}: a single field measurement leaves the pose unobservable",
            "sensing.n",
        )
    for key in ("mag_std", "accel_std", "gyro_std"):
        if getattr(cfg.sensing, key) < 0:
            raise ConfigError("must be non-negative", f"sensing.{key}")
    _length(cfg.sensing.gyro_bias, 3, "sensing.gyro_bias")
    _length(cfg.sensing.gravity, 3, "sensing.gravity")
    if np.linalg.norm(cfg.sensing.gravity) <= 0:
        raise ConfigError("must be nonzero", "sensing.gravity")
    _length(cfg.ekf.p0_diag, 6, "ekf.p0_diag")
    if min(cfg.ekf.p0_diag) < 0:
        raise ConfigError("must be non-negative", "ekf.p0_diag")
    q = cfg.ekf.q_diag
    if isinstance(q, list):
        _length(q, 6, "ekf.q_diag")
    if np.min(q) < 0:
        raise ConfigError("must be non-negative", "ekf.q_diag")
    for key in ("mag_std", "accel_std", "norm_scale", "timestep"):
        _positive(getattr(cfg.ekf, key), f"ekf.{key}")
    for key in ("trials", "max_iterations", "hold_steps", "pos_tol", "orient_tol"):
        _positive(getattr(cfg.sim, key), f"sim.{key}")
    if cfg.sim.seed < 0:
        raise ConfigError("must be non-negative", "sim.seed")
    if cfg.whitening.mode not in ("noise", "rows", "none"):
        raise ConfigError("must be one of noise, rows, none", "whitening.mode")
    for key in ("mag_std", "accel_std", "position_scale", "orientation_scale"):
        _positive(getattr(cfg.whitening, key), f"whitening.{key}")
    _positive(cfg.obsmap.trials, "obsmap.trials")
    _positive(cfg.obsmap.grid, "obsmap.grid")
    if cfg.obsmap.plane not in PLANES:
        raise ConfigError(f"must be one of {sorted(PLANES)}", "obsmap.plane")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML config file; an empty file gives defaults."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"parse error at {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return from_dict(data)
