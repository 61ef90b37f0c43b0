"""Experiment configuration stored as a sectioned INI file.

Schema (every key optional; unknown sections or keys are errors)::

    [experiment]  command, seed, out, threads
    [model]       d, L, delta
    [sampler]     kind, burn_in, thinning, n_samples, phi_method
    [analysis]    R, threshold, scales, weights, tolerance, volume, snapshots

``scales`` and ``weights`` are comma-separated lists. Floats are written
with ``repr`` so a write/read cycle is lossless.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .sampler import ConfigError, SamplerConfig

COMMANDS = ("sample", "estimate-ahom", "percolation", "clt", "oracle-check")

SECTIONS = {
    "experiment": ("command", "seed", "out", "threads"),
    "model": ("d", "L", "delta"),
    "sampler": ("kind", "burn_in", "thinning", "n_samples", "phi_method"),
    "analysis": ("R", "threshold", "scales", "weights", "tolerance", "volume", "snapshots"),
}

# keys that change where or how fast a run happens but never its numbers
NOT_HASHED = ("out", "threads")


@dataclass(frozen=True)
class ExperimentConfig:
    command: str = "sample"
    seed: int = 0
    out: str = "out"
    threads: int = 1
    d: int = 2
    L: int = 8
    delta: float = 0.0
    kind: str = "joint-alternating"
    burn_in: int = 1000
    thinning: int = 10
    n_samples: int = 100
    phi_method: str = "auto"
    R: float = 2.0
    threshold: float = 5.0
    scales: tuple[int, ...] = (1, 2)
    weights: tuple[float, ...] = (1.0, 1.0)
    tolerance: float = 1e-10
    volume: str = "edges"
    snapshots: str = ""

    def validate(self) -> "ExperimentConfig":
        errors = []
        if self.command not in COMMANDS:
            errors.append(f"command: must be one of {COMMANDS}, got {self.command!r}")
        if self.threads < 1:
            errors.append(f"threads: must be >= 1, got {self.threads}")
        if not self.R > 0:
            errors.append(f"R: must be > 0, got {self.R}")
        if not self.threshold > 0:
            errors.append(f"threshold: must be > 0, got {self.threshold}")
        if not self.scales or min(self.scales) < 1:
            errors.append(f"scales: need at least one scale >= 1, got {self.scales}")
        if len(self.weights) != self.d:
            errors.append(f"weights: need {self.d} entries, got {len(self.weights)}")
        if not 0 < self.tolerance < 1:
            errors.append(f"tolerance: must be in (0, 1), got {self.tolerance}")
        if self.volume not in ("edges", "vertices"):
            errors.append(f"volume: must be 'edges' or 'vertices', got {self.volume!r}")
        try:
            self.sampler_config()
        except ConfigError as exc:
            errors.append(str(exc))
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(delta=self.delta, L=self.L, seed=self.seed, burn_in=self.burn_in,
                             thinning=self.thinning, n_samples=self.n_samples, kind=self.kind, d=self.d,
                             phi_method=self.phi_method, tol=self.tolerance).validate()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # --- text form -------------------------------------------------------------

    def to_ini(self, include_all: bool = True) -> str:
        values = asdict(self)
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, keys in SECTIONS.items():
            cp[sec] = {k: _format(values[k]) for k in keys if include_all or k not in NOT_HASHED}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def content_hash(self) -> str:
        """Git blob hash of the canonical text, excluding output location and thread count."""
        data = self.to_ini(include_all=False).encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

    @classmethod
    def from_ini(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        kw = {}
        errors = []
        for sec in cp.sections():
            if sec not in SECTIONS:
                errors.append(f"unknown section [{sec}]")
                continue
            for key, raw in cp[sec].items():
                if key not in SECTIONS[sec]:
                    errors.append(f"[{sec}] {key}: unknown key")
                    continue
                try:
                    kw[key] = _parse(raw, getattr(defaults, key), types[key])
                except ValueError:
                    errors.append(f"[{sec}] {key}: cannot parse {raw!r} as {types[key]}")
        if errors:
            raise ConfigError(f"{source}: " + "; ".join(errors))
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        return cls.from_ini(p.read_text(), source=str(p))

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, default, typ):
    raw = raw.strip()
    if isinstance(default, tuple):
        elem = type(default[0]) if default else float
        return tuple(elem(x.strip()) for x in raw.split(",") if x.strip())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw
