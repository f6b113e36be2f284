"""Flat JSON run configuration with range checks and line-aware errors."""

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace

from .evaluation import DEFAULT_ETAS
from .inference import InferenceConfig


class ConfigError(ValueError):
    """Invalid configuration; ``field`` and ``line`` locate the problem when known."""

    def __init__(self, message, field=None, line=None):
        where = ""
        if line is not None:
            where += f"line {line}: "
        if field is not None:
            where += f"{field}: "
        super().__init__(where + message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    # paths
    dataset: str = None
    out: str = None
    # scene and recording
    layout: str = "hall"
    width_m: float = 14.0
    height_m: float = 10.0
    n_ant: int = 8
    n_scatterers: int = 16
    reflectivity_min: float = 0.5
    reflectivity_max: float = 0.9
    scene_seed: int = 1
    carrier_freq_hz: float = 1.272e9
    bandwidth_hz: float = 50e6
    n_subcarriers: int = 1024
    delta_s: float = 0.2
    T: int = 300
    v_max: float = 2.0
    noise_std: float = 1e-4
    pause_prob: float = 0.1
    pause_mean_steps: float = 10.0
    phase_offset: bool = False
    clearance_m: float = 1.0
    seed: int = 0
    # features
    eps_h: float = 1e-9
    subcarrier_stride: int = 16
    angle_resolution_deg: float = 1.0
    n_signal: int = 1
    # graph and inference
    grid_spacing: float = 0.25
    sigma_m: float = None
    eta: object = 3000.0
    eta_candidates: tuple = DEFAULT_ETAS
    lambda_c: float = 1.0
    beam_width: int = 256
    prune_enabled: bool = False
    max_iters: int = 20
    rel_tol: float = 1e-6
    sigma_theta_floor: float = 1e-4
    sigma_s_floor: float = 1e-6
    sigma0_sq: float = 1e-4
    gamma_min: float = 1e-6
    eps_d: float = 1e-9
    d0: float = 0.1
    # maps and metrics
    bandwidth_h: float = None  # defaults to grid_spacing
    eps_w: float = 1e-9
    coverage_threshold: float = 0.05
    eps_e: float = 1e-9
    threads: int = 1
    _lines: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "_lines":
                continue
            object.__setattr__(self, f.name, _coerce(f.name, getattr(self, f.name), self._line(f.name)))
        _check_ranges(self)

    def _line(self, name):
        return (self._lines or {}).get(name)

    @property
    def d_max_m(self):
        return self.v_max * self.delta_s

    @property
    def kernel_bandwidth_m(self):
        return self.grid_spacing if self.bandwidth_h is None else self.bandwidth_h

    @property
    def auto_eta(self):
        return self.eta == "auto"

    def inference_config(self, eta=None):
        if eta is None:
            eta = 0.0 if self.auto_eta else self.eta
        return InferenceConfig(
            eta=float(eta),
            beam_width=self.beam_width,
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            sigma_theta_floor=self.sigma_theta_floor,
            sigma_s_floor=self.sigma_s_floor,
            prune_enabled=self.prune_enabled,
            sigma0_sq=self.sigma0_sq,
            gamma_min=self.gamma_min,
            eps_d=self.eps_d,
            d0=self.d0,
        )

    def to_dict(self):
        d = asdict(self)
        d.pop("_lines")
        d["eta_candidates"] = list(d["eta_candidates"])
        return d

    def config_hash(self):
        """SHA-256 of the canonical settings; input and output paths are excluded."""
        d = self.to_dict()
        d.pop("dataset")
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        for k in kw:
            if k not in _FIELD_TYPES:
                raise ConfigError("unknown key", field=k)
        return replace(self, **kw)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig) if f.name != "_lines"}
_OPTIONAL = {"dataset", "out", "sigma_m", "bandwidth_h"}

_POSITIVE = {
    "width_m", "height_m", "carrier_freq_hz", "bandwidth_hz", "delta_s", "grid_spacing", "sigma_m",
    "rel_tol", "sigma_theta_floor", "sigma_s_floor", "sigma0_sq", "gamma_min", "eps_d", "d0",
    "bandwidth_h", "eps_w", "eps_e", "eps_h", "angle_resolution_deg", "pause_mean_steps", "clearance_m",
}
_NONNEG = {"noise_std", "v_max", "lambda_c", "coverage_threshold", "reflectivity_min", "n_scatterers", "seed", "scene_seed"}
_AT_LEAST_ONE = {"n_ant", "n_subcarriers", "T", "beam_width", "subcarrier_stride", "n_signal", "threads"}


def _coerce(name, value, line):
    typ = _FIELD_TYPES[name]
    if value is None:
        if name in _OPTIONAL:
            return None
        raise ConfigError("must not be null", field=name, line=line)
    if name == "eta":
        if value == "auto":
            return value
        typ = float
    if name == "eta_candidates":
        if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
            raise ConfigError("expected a list of numbers", field=name, line=line)
        return tuple(_coerce_scalar(name, v, float, line) for v in value)
    if name in ("sigma_m", "bandwidth_h"):
        typ = float
    return _coerce_scalar(name, value, typ, line)


def _coerce_scalar(name, value, typ, line):
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"expected true/false, got {value!r}", field=name, line=line)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"expected an integer, got {value!r}", field=name, line=line)
        return int(value)
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", field=name, line=line)
        if not math.isfinite(value):
            raise ConfigError("must be finite", field=name, line=line)
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", field=name, line=line)
        return value
    return value


def _check_ranges(cfg):
    def bad(name, msg):
        raise ConfigError(msg, field=name, line=cfg._line(name))

    for name in _POSITIVE:
        v = getattr(cfg, name)
        if v is not None and not v > 0:
            bad(name, f"must be > 0, got {v}")
    for name in _NONNEG:
        if getattr(cfg, name) < 0:
            bad(name, f"must be >= 0, got {getattr(cfg, name)}")
    for name in _AT_LEAST_ONE:
        if getattr(cfg, name) < 1:
            bad(name, f"must be >= 1, got {getattr(cfg, name)}")
    if cfg.layout not in ("hall", "lshape"):
        bad("layout", f"must be 'hall' or 'lshape', got {cfg.layout!r}")
    if not 0 <= cfg.pause_prob < 1:
        bad("pause_prob", f"must be in [0, 1), got {cfg.pause_prob}")
    if cfg.reflectivity_max < cfg.reflectivity_min:
        bad("reflectivity_max", "must be >= reflectivity_min")
    if cfg.eta != "auto" and cfg.eta < 0:
        bad("eta", f"must be >= 0 or \"auto\", got {cfg.eta}")
    if not cfg.eta_candidates or min(cfg.eta_candidates) < 0:
        bad("eta_candidates", "must be a nonempty list of values >= 0")
    if cfg.max_iters < 0:
        bad("max_iters", f"must be >= 0, got {cfg.max_iters}")
    if cfg.subcarrier_stride > cfg.n_subcarriers:
        bad("subcarrier_stride", "exceeds n_subcarriers")


def _key_lines(text):
    lines = {}
    for i, row in enumerate(text.splitlines(), start=1):
        for m in re.finditer(r'"([^"\\]+)"\s*:', row):
            lines.setdefault(m.group(1), i)
    return lines


def parse_config(text):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", line=1)
    lines = _key_lines(text)
    for key in raw:
        if key not in _FIELD_TYPES:
            raise ConfigError("unknown key", field=key, line=lines.get(key))
    return RunConfig(**raw, _lines=lines)


def load_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)
