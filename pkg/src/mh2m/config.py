"""Run configuration: strict JSON documents mapped onto dataclasses."""
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError

MODES = ("solve", "verify", "convergence", "compare-msfem")


@dataclass
class ProblemConfig:
    domain: list = field(default_factory=lambda: [0.0, 1.0, 0.0, 1.0])
    mesh_file: Optional[str] = None
    case: Optional[str] = "sine"
    case_params: dict = field(default_factory=dict)
    coefficient: Optional[dict] = None
    source: Optional[dict] = None


@dataclass
class DiscretizationConfig:
    target_H: float = 0.5
    n_gamma: int = 1
    n_lambda_per_gamma: int = 1
    target_h: Optional[float] = None
    h_fraction: float = 0.25
    k: int = 0


@dataclass
class SolverConfig:
    method: str = "direct"
    rtol: float = 1e-12
    form: str = "energy"


@dataclass
class OutputConfig:
    dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])
    dump_caches: bool = False


@dataclass
class DiagnosticsConfig:
    reference_factor: int = 4
    error_proxies: bool = True
    reference_n: int = 128
    infsup_elements: list = field(default_factory=lambda: [0])


@dataclass
class SweepConfig:
    parameter: str = "target_H"
    values: list = field(default_factory=lambda: [0.25, 0.125, 0.0625])
    rate_bands: Optional[dict] = None


@dataclass
class MsFEMConfig:
    levels: list = field(default_factory=lambda: [{"h_fraction": 0.5}, {"h_fraction": 0.25}])


@dataclass
class RunConfig:
    mode: str = "solve"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    msfem: MsFEMConfig = field(default_factory=MsFEMConfig)
    thresholds: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, data):
        cfg = _from_dict(cls, data, "config")
        cfg.validate()
        return cfg

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        d = self.discretization
        if d.k not in (0, 1):
            raise ConfigError(f"k must be 0 or 1, got {d.k}")
        for name in ("target_H", "h_fraction"):
            if not _positive(getattr(d, name)):
                raise ConfigError(f"discretization.{name} must be positive")
        if d.target_h is not None and not _positive(d.target_h):
            raise ConfigError("discretization.target_h must be positive")
        for name in ("n_gamma", "n_lambda_per_gamma"):
            v = getattr(d, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"discretization.{name} must be an integer >= 1")
        s = self.solver
        if s.method not in ("direct", "cg"):
            raise ConfigError("solver.method must be 'direct' or 'cg'")
        if s.form not in ("energy", "flux"):
            raise ConfigError("solver.form must be 'energy' or 'flux'")
        if not (isinstance(s.rtol, (int, float)) and 0 < s.rtol <= 1e-6):
            raise ConfigError("solver.rtol must lie in (0, 1e-6]")
        p = self.problem
        if p.case is not None and (p.coefficient is not None or p.source is not None):
            raise ConfigError("problem.case fixes A and f; drop problem.coefficient/source")
        if p.case is None and p.coefficient is None:
            raise ConfigError("problem needs either a case or a coefficient")
        if len(p.domain) != 4:
            raise ConfigError("problem.domain is [x0, x1, y0, y1]")
        if self.diagnostics.reference_factor < 1:
            raise ConfigError("diagnostics.reference_factor must be >= 1")
        if self.mode == "convergence" and len(self.sweep.values) < 3:
            raise ConfigError("convergence sweeps need at least 3 levels")
        for key, v in self.thresholds.items():
            if not _positive(v):
                raise ConfigError(f"threshold {key} must be positive")


def _positive(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def _from_dict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        if dataclasses.is_dataclass(ftype):
            kwargs[name] = _from_dict(ftype, value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(data)
