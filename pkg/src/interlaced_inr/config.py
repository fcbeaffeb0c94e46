"""Experiment configuration files.

A config is a TOML document with the sections ``[phantom]``, ``[scan]``,
``[reconstruct]``, ``[metrics]`` and ``[experiment]``. Every key has a
default; unknown sections or keys are rejected so that typos fail loudly.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .admm import ReconstructionConfig, TvConfig
from .solvers import CglsConfig, RingEstimatorConfig

__all__ = [
    "ConfigError",
    "PhantomSection",
    "ScanSection",
    "ReconstructSection",
    "MetricsSection",
    "ExperimentSection",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "apply_overrides",
]


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class PhantomSection:
    size: int = 64
    n_frames: int = 64
    """Saved object states; a scan needs one per projection."""
    save_every: int = 1
    burn_in: int = 150
    """Steps simulated before the first saved state."""
    mobility: float = 1.0
    epsilon: float = 1.0
    dt: float = 1.0
    barrier: float = 1.0
    c0: float = 0.5
    noise: float = 0.05
    seed: int = 0
    threshold: float = 0.5
    mu_low: float = 0.0750
    mu_high: float = 0.4303
    pixel_size: float = 0.003
    crop_origin: list = field(default_factory=lambda: [0, 0])
    crop_size: int = 0
    """Size of a periodic crop taken at ``crop_origin``; 0 keeps the full field."""


@dataclass(frozen=True)
class ScanSection:
    n_theta: int = 64
    k: int = 8
    n_cycles: int = 1
    n_det: str | int = "width"
    """``"width"``, ``"full"`` (covers the image diagonal) or an explicit count."""
    step: float = 0.5
    dose: float = 0.0
    """Expected counts per unattenuated ray; 0 means noiseless."""
    noise_seed: int = 0
    ring_amplitude: float = 0.0
    """Two-bump detector bias amplitude as a fraction of the sinogram maximum; 0 disables."""
    ring_centers: list = field(default_factory=lambda: [0.3, 0.65])
    ring_width: float = 0.02


@dataclass(frozen=True)
class ReconstructSection:
    method: str = "admm-inr"
    outer_iters: int = 20
    inr_updates_per_iter: int = 50
    cgls_iters: int = 20
    cgls_tol: float = 1e-6
    mu: float = 1.0
    lambda_s: float = 1e-3
    lambda_t: float = 1e-3
    lambda_a: float = 0.0
    tv_eps: float = 1e-6
    k_s: int = 2
    k_t: int = 2
    downsample: int = 2
    jitter: bool = True
    wls: bool = False
    ring_correction: bool = False
    huber_delta: float = 0.0
    """0 selects the robust default threshold."""
    irls_iters: int = 10
    ring_smooth: float = 0.0
    axial_batch: int = 1
    hidden: int = 256
    n_layers: int = 3
    mapping_size: int = 256
    encoding_scale: float = 5.0
    time_scale: float = 1.0
    omega0: float = 30.0
    lr: float = 1e-3
    lr_decay: float = 0.98
    seed: int = 0
    mask_circle: bool = False
    fbp_filter: str = "ramlak"
    n_workers: int = 1

    def to_reconstruction_config(self) -> ReconstructionConfig:
        return ReconstructionConfig(
            outer_iters=self.outer_iters,
            inr_updates_per_iter=self.inr_updates_per_iter,
            cgls=CglsConfig(self.cgls_iters, self.cgls_tol, self.mu),
            tv=TvConfig(self.lambda_s, self.lambda_t, self.lambda_a, self.tv_eps, self.k_s, self.k_t),
            downsample=self.downsample,
            jitter=self.jitter,
            wls=self.wls,
            ring_correction=self.ring_correction,
            ring=RingEstimatorConfig(self.huber_delta or None, self.irls_iters, self.ring_smooth),
            axial_batch=self.axial_batch,
            hidden=self.hidden,
            n_layers=self.n_layers,
            mapping_size=self.mapping_size,
            encoding_scale=self.encoding_scale,
            time_scale=self.time_scale,
            omega0=self.omega0,
            lr=self.lr,
            lr_decay=self.lr_decay,
            seed=self.seed,
            mask_circle=self.mask_circle,
            fbp_filter=self.fbp_filter,
            n_workers=self.n_workers,
        )


@dataclass(frozen=True)
class MetricsSection:
    mask: str = "full"
    max_val: float = 0.0
    """0 uses the dynamic range of the ground truth."""


@dataclass(frozen=True)
class ExperimentSection:
    name: str = "experiment"
    methods: list = field(default_factory=lambda: ["fbp", "admm-inr"])
    sweep: list = field(default_factory=list)
    """Entries like ``{scan = {n_theta = 128, n_cycles = 2}}``; empty runs the base config once."""
    workers: int = 1
    budget_minutes: float = 30.0
    """Soft budget; exceeding it only logs a warning."""


_SECTIONS = {
    "phantom": PhantomSection,
    "scan": ScanSection,
    "reconstruct": ReconstructSection,
    "metrics": MetricsSection,
    "experiment": ExperimentSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomSection = PhantomSection()
    scan: ScanSection = ScanSection()
    reconstruct: ReconstructSection = ReconstructSection()
    metrics: MetricsSection = MetricsSection()
    experiment: ExperimentSection = ExperimentSection()

    def validate(self) -> "ExperimentConfig":
        p, s, r, m = self.phantom, self.scan, self.reconstruct, self.metrics
        _require(p.size >= 8 and p.size & (p.size - 1) == 0, "phantom.size", "must be a power of two >= 8")
        _require(p.n_frames >= 1, "phantom.n_frames", "must be >= 1")
        _require(p.save_every >= 1, "phantom.save_every", "must be >= 1")
        _require(p.burn_in >= 0, "phantom.burn_in", "must be >= 0")
        for key in ("mobility", "epsilon", "dt", "pixel_size"):
            _require(getattr(p, key) > 0, f"phantom.{key}", "must be positive")
        _require(p.mu_low < p.mu_high, "phantom.mu_low", "must be below mu_high")
        _require(len(p.crop_origin) == 2, "phantom.crop_origin", "needs two entries")
        _require(p.crop_size == 0 or p.crop_size & (p.crop_size - 1) == 0, "phantom.crop_size", "must be 0 or a power of two")
        _require(s.k >= 1 and s.k & (s.k - 1) == 0, "scan.k", "must be a power of two")
        _require(s.n_theta >= 1 and s.n_theta % s.k == 0, "scan.n_theta", "must be a multiple of k")
        _require(s.n_cycles >= 1, "scan.n_cycles", "must be >= 1")
        _require(s.dose >= 0, "scan.dose", "must be >= 0")
        _require(s.ring_amplitude >= 0, "scan.ring_amplitude", "must be >= 0")
        _require(
            s.n_det in ("width", "full") or (isinstance(s.n_det, int) and s.n_det >= 1),
            "scan.n_det",
            "must be 'width', 'full' or a positive integer",
        )
        _require(r.method in ("fbp", "admm-inr"), "reconstruct.method", "must be 'fbp' or 'admm-inr'")
        _require(r.fbp_filter in ("ramlak", "hann"), "reconstruct.fbp_filter", "must be 'ramlak' or 'hann'")
        _require(m.mask in ("full", "circle"), "metrics.mask", "must be 'full' or 'circle'")
        _require(m.max_val >= 0, "metrics.max_val", "must be >= 0")
        for meth in self.experiment.methods:
            _require(meth in ("fbp", "admm-inr"), "experiment.methods", f"unknown method {meth!r}")
        try:
            r.to_reconstruction_config()
        except ValueError as exc:
            raise ConfigError(f"reconstruct: {exc}") from exc
        base = replace(self, experiment=replace(self.experiment, sweep=[]))
        for i, entry in enumerate(self.experiment.sweep):
            if not isinstance(entry, dict):
                raise ConfigError(f"experiment.sweep[{i}] must be a table", "experiment.sweep")
            try:
                apply_overrides(base, entry).validate()
            except ConfigError as exc:
                raise ConfigError(f"experiment.sweep[{i}]: {exc}", exc.key) from exc
        return self

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}


def _require(ok: bool, key: str, what: str) -> None:
    if not ok:
        raise ConfigError(f"{key} {what}", key)


def _coerce(cls, section: str, values: dict):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]", f"{section}.{key}")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be true or false", f"{section}.{key}")
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{section}.{key} must be a list", f"{section}.{key}")
        elif key != "n_det" and not isinstance(value, type(default)):
            raise ConfigError(f"{section}.{key} must be of type {type(default).__name__}", f"{section}.{key}")
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(data: dict) -> ExperimentConfig:
    """Build and validate a config from parsed TOML."""
    sections = {}
    for name, values in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]", name)
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table", name)
        sections[name] = _coerce(_SECTIONS[name], name, values)
    return ExperimentConfig(**sections).validate()


def load_config(path=None) -> ExperimentConfig:
    """Read a TOML config; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig().validate()
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(cfg.to_dict()))


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Return ``cfg`` with per-section key overrides applied (keys are checked)."""
    out = cfg
    for name, values in overrides.items():
        if name not in _SECTIONS or name == "experiment":
            raise ConfigError(f"cannot override section {name!r}", name)
        if not isinstance(values, dict):
            raise ConfigError(f"override for [{name}] must be a table", name)
        base = asdict(getattr(out, name))
        merged = _coerce(_SECTIONS[name], name, {**base, **values})
        out = replace(out, **{name: merged})
    return out
