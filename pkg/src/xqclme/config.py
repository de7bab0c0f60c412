"""Run configuration: INI-style ``[section]`` / ``key = value`` files with CLI overrides."""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

EXAMPLES = ("circle", "square", "square-modified", "fiber")
GAMMA_MODES = ("baseline", "uniform", "nonuniform", "pattern")

# field name -> (section, type)
_SCHEMA = {
    "example": ("run", str),
    "scheme": ("run", str),
    "h": ("run", float),
    "output": ("run", str),
    "seed": ("run", int),
    "workers": ("run", int),
    "gamma_mode": ("gamma", str),
    "gamma0": ("gamma", float),
    "gamma_min": ("gamma", float),
    "gamma_max": ("gamma", float),
    "gamma_if": ("gamma", float),
    "gamma_ff": ("gamma", float),
    "max_iter": ("gamma", int),
    "enrich": ("gamma", bool),
    "u_d": ("load", float),
    "reduced_rel_tol": ("solver", float),
    "lme_tol": ("solver", float),
    "schemes": ("bench", str),
    "spacings": ("bench", str),
    "n_bins": ("bench", int),
    "record_timing": ("bench", bool),
}


@dataclass
class RunConfig:
    example: str = "circle"
    scheme: str = "lme-pattern-H"
    h: float = 8.0
    output: str = "out"
    seed: int = 0
    workers: int = 1
    gamma_mode: str = "baseline"
    gamma0: float = 1.8
    gamma_min: float = float("nan")  # nan: per-example default
    gamma_max: float = 4.0
    gamma_if: float = 0.8
    gamma_ff: float = 2.0
    max_iter: int = 200
    enrich: bool = True
    u_d: float = 2.56
    reduced_rel_tol: float = 1e-10
    lme_tol: float = 1e-10
    schemes: str = "linear-H,lme-baseline-H,lme-pattern-H"
    spacings: str = "32,16,8,4"
    n_bins: int = 54
    record_timing: bool = False

    def validate(self):
        from .bench import SCHEMES
        if self.example not in EXAMPLES:
            raise ConfigError(f"example must be one of {', '.join(EXAMPLES)}; got {self.example!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {', '.join(SCHEMES)}; got {self.scheme!r}")
        for s in self.scheme_list:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r} in schemes")
        for h in [self.h] + self.spacing_list:
            ratio = 256.0 / h if h > 0 else float("nan")
            if not h > 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(f"h = {h:g} is invalid: the repatom spacing must divide the "
                                  f"256 mm domain edge")
        if self.gamma_mode not in GAMMA_MODES:
            raise ConfigError(f"gamma mode must be one of {', '.join(GAMMA_MODES)}")
        lo = self.gamma_min
        if lo == lo and not 0 < lo < self.gamma_max:
            raise ConfigError("gamma bounds must satisfy 0 < gamma_min < gamma_max")
        if not self.gamma_max > 0:
            raise ConfigError("gamma_max must be positive")
        if self.workers < 1 or self.max_iter < 1 or self.n_bins < 1:
            raise ConfigError("workers, max_iter and n_bins must be at least 1")
        if not self.u_d > 0:
            raise ConfigError("u_d must be positive")
        return self

    @property
    def scheme_list(self):
        return [s.strip() for s in self.schemes.split(",") if s.strip()]

    @property
    def spacing_list(self):
        try:
            return [float(s) for s in self.spacings.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"spacings must be comma-separated numbers: {exc}") from None

    # -- serialization ------------------------------------------------------
    def to_ini(self):
        cp = configparser.ConfigParser()
        for f in fields(self):
            sec, typ = _SCHEMA[f.name]
            if not cp.has_section(sec):
                cp.add_section(sec)
            v = getattr(self, f.name)
            cp.set(sec, f.name, _format(v, typ))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from None
        kw = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in _SCHEMA:
                    raise ConfigError(f"unknown key {key!r} in section [{sec}]")
                want, typ = _SCHEMA[key]
                if want != sec:
                    raise ConfigError(f"key {key!r} belongs in section [{want}], not [{sec}]")
                kw[key] = _parse(raw, typ, key)
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                return cls.from_ini(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None

    def with_overrides(self, **kw):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in kw.items():
            if v is None:
                continue
            if k not in data:
                raise ConfigError(f"unknown setting {k!r}")
            data[k] = v
        return RunConfig(**data)

    def digest(self):
        """Hash of the settings that affect results (not where or how fast they are written)."""
        same = replace(self, output="", workers=1)
        return hashlib.sha256(same.to_ini().encode()).hexdigest()[:16]


def _format(v, typ):
    if typ is bool:
        return "true" if v else "false"
    if typ is float:
        return repr(float(v))
    return str(v)


def _parse(raw, typ, key):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}") from None
