"""Run configuration: preset name plus field overrides, stored as an INI file."""

import configparser
import io
from dataclasses import dataclass, replace
from typing import Optional

from .errors import ConfigurationError
from .presets import preset as make_preset

_SECTIONS = {
    "problem": ("preset", "scale", "epsilon", "final_time", "sigma_s"),
    "mesh": ("nx", "ny"),
    "quadrature": ("v_train", "v_test"),
    "greedy": ("tol_ratio", "tol_error_rho", "tol_error_f", "max_iterations",
               "initial_lebedev_points", "M_min", "M_max", "solver"),
}


@dataclass
class RunConfig:
    preset: str = "homogeneous"
    scale: str = "desk"
    epsilon: Optional[float] = None
    final_time: Optional[float] = None
    sigma_s: Optional[float] = None
    nx: Optional[int] = None
    ny: Optional[int] = None
    v_train: Optional[int] = None
    v_test: Optional[int] = None
    tol_ratio: Optional[float] = None
    tol_error_rho: Optional[float] = None
    tol_error_f: Optional[float] = None
    max_iterations: Optional[int] = None
    initial_lebedev_points: Optional[int] = None
    M_min: Optional[int] = None
    M_max: Optional[int] = None
    solver: Optional[str] = None

    def with_(self, **changes):
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    # ------------------------------------------------------------ text form

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in _SECTIONS.items():
            parser[section] = {}
            for key in keys:
                value = getattr(self, key)
                if value is not None:
                    parser[section][key] = repr(value) if isinstance(value, float) else str(value)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config: {exc}") from exc
        values = {}
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                if key not in _SECTIONS[section]:
                    raise ConfigurationError(f"unknown key {key!r} in [{section}]")
                values[key] = _convert(raw, key)
        return cls(**values)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_ini())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_ini(fh.read())

    # ------------------------------------------------------------ to preset

    def build(self):
        p = make_preset(self.preset, self.scale, epsilon=self.epsilon, sigma_s=self.sigma_s)
        problem = p.problem
        if self.final_time is not None:
            problem = problem.with_(final_time=float(self.final_time))
        config = p.config
        overrides = {k: getattr(self, k) for k in _SECTIONS["greedy"] if getattr(self, k) is not None}
        if overrides:
            config = replace(config, **overrides)
        return p.with_(problem=problem, config=config,
                       nx=self.nx or p.nx, ny=self.ny or p.ny,
                       n_train=self.v_train or p.n_train, n_test=self.v_test or p.n_test)


_INT_KEYS = {"nx", "ny", "v_train", "v_test", "max_iterations", "initial_lebedev_points",
             "M_min", "M_max"}
_FLOAT_KEYS = {"epsilon", "final_time", "sigma_s", "tol_ratio", "tol_error_rho", "tol_error_f"}


def _convert(raw, key):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value {raw!r} for {key}") from exc
    return raw
