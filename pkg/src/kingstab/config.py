"""Experiment configuration: flat ``key = value`` text with dotted sections.

Example::

    king.W0 = 2.0
    generator.s = 0.08
    sim.N = 100000
    seed = 7

Values are Python literals; bare words are read as strings. Lines starting
with ``#`` or ``;`` are comments.
"""

import ast
import configparser
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError


@dataclass(frozen=True)
class KingSection:
    W0: float = 2.0
    r_max_hint: float | None = None
    ode_tolerance: float = 1e-6
    grid_size: int = 4001


@dataclass(frozen=True)
class GeneratorSection:
    family: str = "odd_bump"
    amplitude: float = 1.0
    coeffs: tuple = ((1.0,),)
    eps: float | None = None
    kappa: float = 0.5
    s: float = 0.08


@dataclass(frozen=True)
class CutoffSection:
    eps_E: float | None = None
    eps_L: float | None = None


@dataclass(frozen=True)
class SimSection:
    N: int = 100_000
    steps_per_tdyn: int = 200
    horizon_tdyn: float = 10.0
    output_stride: int = 20
    softening: float = 0.0
    checkpoint_stride: int = 0
    cic_stride: int = 0


@dataclass(frozen=True)
class QuadratureSection:
    n_r: int = 64
    n_s: int = 32
    n_c: int = 32
    orbit_n: int = 24
    orbit_theta: int = 32


@dataclass(frozen=True)
class ToleranceSection:
    poisson: float = 1e-6
    antonov: float = 1e-4
    appendix: float = 1e-6
    round_trip: float = 1e-3
    orthogonality: float = 1e-6
    weak_identity: float = 1e-3
    decrel: float = 1e-8
    casimir: float = 1e-6
    energy_drift: float = 1e-4


@dataclass(frozen=True)
class VerifySection:
    generators_fast: int = 10
    generators_full: int = 50
    radii_fast: int = 10
    radii_full: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    king: KingSection = field(default_factory=KingSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    cutoff: CutoffSection = field(default_factory=CutoffSection)
    sim: SimSection = field(default_factory=SimSection)
    quadrature: QuadratureSection = field(default_factory=QuadratureSection)
    tolerances: ToleranceSection = field(default_factory=ToleranceSection)
    verify: VerifySection = field(default_factory=VerifySection)
    seed: int = 0
    out: str = "kingstab-out"

    def as_dict(self):
        return asdict(self)


_SECTION_TYPES = {
    "king": KingSection, "generator": GeneratorSection, "cutoff": CutoffSection,
    "sim": SimSection, "quadrature": QuadratureSection, "tolerances": ToleranceSection,
    "verify": VerifySection,
}


def _literal(text):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def parse_config(text):
    """Parse config text into an ExperimentConfig; raises ConfigError."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if parser.sections() != ["config"]:
        raise ConfigError("section headers are not allowed; use dotted keys such as king.W0")
    raw = dict(parser["config"])
    sections = {name: {} for name in _SECTION_TYPES}
    top = {}
    for key, text_value in raw.items():
        value = _literal(text_value.strip())
        if "." in key:
            sec, _, name = key.partition(".")
            if sec not in _SECTION_TYPES:
                raise ConfigError(f"unknown section '{sec}' in key '{key}'")
            defaults = _SECTION_TYPES[sec]()
            if not hasattr(defaults, name):
                raise ConfigError(f"unknown key '{key}'")
            sections[sec][name] = value
        elif key in ("seed", "out"):
            top[key] = value
        else:
            raise ConfigError(f"unknown key '{key}'")
    built = {}
    for sec, cls in _SECTION_TYPES.items():
        defaults = cls()
        values = {}
        for name, value in sections[sec].items():
            d = getattr(defaults, name)
            values[name] = value if d is None or value is None else _coerce(value, d, f"{sec}.{name}")
        built[sec] = replace(defaults, **values)
    cfg = ExperimentConfig(**built)
    if "seed" in top:
        cfg = replace(cfg, seed=_coerce(top["seed"], 0, "seed"))
    if "out" in top:
        cfg = replace(cfg, out=_coerce(top["out"], "", "out"))
    validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def validate(cfg):
    k = cfg.king
    if not k.W0 > 0:
        raise ConfigError("king.W0 must be positive")
    if not k.ode_tolerance > 0:
        raise ConfigError("king.ode_tolerance must be positive")
    if k.grid_size < 100:
        raise ConfigError("king.grid_size must be at least 100")
    g = cfg.generator
    if g.family not in ("odd_bump",):
        raise ConfigError(f"unknown generator family '{g.family}'")
    if g.eps is not None and not 0 < g.eps < k.W0:
        raise ConfigError("generator.eps must lie in (0, W0)")
    try:
        coeffs = [[float(x) for x in row] for row in g.coeffs]
    except TypeError:
        raise ConfigError("generator.coeffs must be a nested list of numbers") from None
    if not coeffs or len({len(row) for row in coeffs}) != 1:
        raise ConfigError("generator.coeffs must be a rectangular nested list")
    s = cfg.sim
    if s.N < 1000:
        raise ConfigError("sim.N must be at least 1000")
    if s.steps_per_tdyn < 1 or s.horizon_tdyn <= 0 or s.output_stride < 1:
        raise ConfigError("sim step settings must be positive")
    if s.softening < 0:
        raise ConfigError("sim.softening must be nonnegative")
    q = cfg.quadrature
    if q.n_c % 2 or min(q.n_r, q.n_s, q.n_c, q.orbit_n, q.orbit_theta) < 4:
        raise ConfigError("quadrature sizes must be >= 4 and quadrature.n_c even")
    for name, value in asdict(cfg.tolerances).items():
        if not value > 0:
            raise ConfigError(f"tolerances.{name} must be positive")
    for name in ("eps_E", "eps_L"):
        v = getattr(cfg.cutoff, name)
        if v is not None and not v > 0:
            raise ConfigError(f"cutoff.{name} must be positive")
    return cfg
