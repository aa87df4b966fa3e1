"""Run configuration: YAML file plus ``--set`` overrides plus ``.env``.

Every experiment folder carries one ``config.yaml``. Keys keep their
source line so schema errors read ``<file>:<line>: <dotted.key>: <problem>``.
"""

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml
from dotenv import load_dotenv

from resonate.errors import ConfigError
from resonate.geometry import (
    CavitySpec,
    Envelope,
    RectangleSpec,
    benchmark_resonator,
    build_dumbbell,
    build_resonator,
)

logger = logging.getLogger(__name__)

load_dotenv()

GEOMETRY_KINDS = ("resonator", "cavity", "rectangle", "dumbbell")
CAVITY_KINDS = ("disc", "ellipse", "polygon")


def worker_count(requested: Optional[int] = None) -> int:
    """Worker pool size, capped by ``RESONATE_THREADS``."""
    cap = os.environ.get("RESONATE_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    if requested is None:
        return max(1, limit)
    return max(1, min(int(requested), limit))


def default_log_level() -> str:
    return os.environ.get("RESONATE_LOG_LEVEL", "INFO").upper()


@dataclass
class GeometryConfig:
    kind: str = "resonator"
    cavity: Dict[str, Any] = field(default_factory=lambda: {"kind": "disc", "radius": 1.0})
    neck_length: float = 0.4
    eps: float = 0.25
    eps0: Optional[float] = None
    envelope: Optional[Dict[str, Any]] = None
    width: float = 1.0
    height: float = 2.0

    def problems(self) -> List[Tuple[str, str]]:
        out = []
        if self.kind not in GEOMETRY_KINDS:
            out.append(("kind", f"must be one of {', '.join(GEOMETRY_KINDS)}"))
        if self.cavity.get("kind") not in CAVITY_KINDS:
            out.append(("cavity.kind", f"must be one of {', '.join(CAVITY_KINDS)}"))
        required = {"ellipse": ("semi_x", "semi_y"), "polygon": ("vertices",)}.get(self.cavity.get("kind"), ())
        for key in required:
            if key not in self.cavity:
                out.append((f"cavity.{key}", "is required for this cavity kind"))
        for key in ("neck_length", "eps", "width", "height"):
            if getattr(self, key) <= 0:
                out.append((key, "must be positive"))
        return out

    def cavity_spec(self) -> CavitySpec:
        c = self.cavity
        if c["kind"] == "disc":
            return CavitySpec.disc(c.get("radius", 1.0))
        if c["kind"] == "ellipse":
            return CavitySpec.ellipse(c["semi_x"], c["semi_y"], c.get("rotation_deg", 0.0))
        return CavitySpec.polygon(c["vertices"], c.get("smoothing", 0.05))

    def build(self, eps: Optional[float] = None, neck_length: Optional[float] = None):
        """Geometry object for this section, optionally at another ε or L."""
        eps = self.eps if eps is None else eps
        length = self.neck_length if neck_length is None else neck_length
        if self.kind == "rectangle":
            return RectangleSpec(self.width, self.height)
        cavity = self.cavity_spec()
        if self.kind == "cavity":
            return cavity
        if self.kind == "dumbbell":
            return build_dumbbell(cavity, length, eps, self.eps0)
        if self.envelope is None and cavity.kind == "disc":
            return benchmark_resonator(eps, length, cavity.params[0])
        envelope = None
        if self.envelope is not None:
            envelope = Envelope(tuple(self.envelope["center"]), float(self.envelope["radius"]))
        return build_resonator(cavity, envelope, length, eps, self.eps0)


@dataclass
class MeshConfig:
    h: float = 0.08
    h_exterior: Optional[float] = None
    neck_layers: int = 8
    grading: float = 0.3
    min_angle: float = 20.0

    def problems(self):
        out = []
        if self.h <= 0:
            out.append(("h", "must be positive"))
        if self.neck_layers < 8:
            out.append(("neck_layers", "must be at least 8"))
        if self.grading <= 0:
            out.append(("grading", "must be positive"))
        if not 0 < self.min_angle <= 30:
            out.append(("min_angle", "must lie in (0, 30]"))
        return out


@dataclass
class FemConfig:
    order: int = 2

    def problems(self):
        return [] if self.order in (1, 2) else [("order", "must be 1 or 2")]


@dataclass
class SpectraConfig:
    mode: int = 1
    count: int = 6
    shift: float = 0.0
    margin: float = 0.1

    def problems(self):
        out = []
        if self.mode < 1:
            out.append(("mode", "is a 1-based eigenvalue index"))
        if self.count < 1:
            out.append(("count", "must be at least 1"))
        if self.margin <= 0:
            out.append(("margin", "must be positive"))
        return out


@dataclass
class PMLSection:
    inner: Optional[float] = None
    thickness: Optional[float] = None
    sigma0: Optional[float] = None
    variants: bool = True

    def problems(self):
        out = []
        for key in ("inner", "thickness", "sigma0"):
            value = getattr(self, key)
            if value is not None and value <= 0:
                out.append((key, "must be positive"))
        return out


@dataclass
class SweepConfig:
    epsilons: List[float] = field(default_factory=lambda: [0.40, 0.33, 0.28, 0.24, 0.21])
    neck_lengths: List[float] = field(default_factory=list)
    workers: Optional[int] = None

    def problems(self):
        out = []
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            out.append(("epsilons", "must be a non-empty list of positive widths"))
        if any(v <= 0 for v in self.neck_lengths):
            out.append(("neck_lengths", "must be positive"))
        if self.workers is not None and self.workers < 1:
            out.append(("workers", "must be at least 1"))
        return out


@dataclass
class GluingConfig:
    probes: int = 20
    iterations: int = 30
    contour_nodes: int = 16
    samples: int = 10
    far_shift: float = -10.0

    def problems(self):
        out = []
        if self.contour_nodes < 16:
            out.append(("contour_nodes", "must be at least 16"))
        for key in ("probes", "iterations", "samples"):
            if getattr(self, key) < 1:
                out.append((key, "must be at least 1"))
        return out


@dataclass
class NodalConfig:
    tau: float = 1e-3
    delta: Optional[float] = None
    modes: int = 6

    def problems(self):
        out = []
        if not 0 < self.tau < 1:
            out.append(("tau", "must lie in (0, 1)"))
        if self.delta is not None and self.delta <= 0:
            out.append(("delta", "must be positive"))
        if self.modes < 1:
            out.append(("modes", "must be at least 1"))
        return out


@dataclass
class WaveConfig:
    periods: float = 40.0
    cfl: float = 0.98
    window: float = 0.25
    filter_tol: float = 1e-6
    max_degree: int = 8192
    energy_floor: float = 1e-20
    transient: float = 0.2
    samples: int = 400
    offset: float = 0.0
    control_steps: int = 1000

    def problems(self):
        out = []
        if not 0 < self.cfl <= 1:
            out.append(("cfl", "must lie in (0, 1]"))
        if not 0 < self.window < 1:
            out.append(("window", "must lie in (0, 1)"))
        if not 0 <= self.transient < 1:
            out.append(("transient", "must lie in [0, 1)"))
        for key in ("periods", "filter_tol", "energy_floor"):
            if getattr(self, key) <= 0:
                out.append((key, "must be positive"))
        return out


_SECTIONS = {
    "geometry": GeometryConfig,
    "mesh": MeshConfig,
    "fem": FemConfig,
    "spectra": SpectraConfig,
    "pml": PMLSection,
    "sweep": SweepConfig,
    "gluing": GluingConfig,
    "nodal": NodalConfig,
    "wave": WaveConfig,
}


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    fem: FemConfig = field(default_factory=FemConfig)
    spectra: SpectraConfig = field(default_factory=SpectraConfig)
    pml: PMLSection = field(default_factory=PMLSection)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    gluing: GluingConfig = field(default_factory=GluingConfig)
    nodal: NodalConfig = field(default_factory=NodalConfig)
    wave: WaveConfig = field(default_factory=WaveConfig)
    seed: int = 20240611
    source: Optional[str] = None

    def snapshot(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("source")
        return data


# --- loading --------------------------------------------------------------------------


def _line_index(node, prefix: str = "", out: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """Map dotted keys to 1-based source lines from a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            dotted = f"{prefix}{key_node.value}"
            out[dotted] = key_node.start_mark.line + 1
            _line_index(value_node, dotted + ".", out)
    return out


def _check_type(value, annotation) -> bool:
    text = str(annotation)
    if value is None:
        return text.startswith("typing.Optional") or "None" in text
    if "Dict" in text:
        return isinstance(value, dict)
    if "List" in text:
        return isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    if annotation is bool:
        return isinstance(value, bool)
    if annotation is int or text == "typing.Optional[int]":
        return isinstance(value, int) and not isinstance(value, bool)
    if annotation is float or text == "typing.Optional[float]":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation is str:
        return isinstance(value, str)
    return True


def _coerce(value, annotation):
    text = str(annotation)
    if value is None:
        return None
    if annotation is float or text == "typing.Optional[float]":
        return float(value)
    if "List" in text:
        return [float(v) for v in value]
    return value


def _build_section(name: str, cls, raw, lines: Dict[str, int], where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}:{lines.get(name, 0)}: {name}: must be a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        dotted = f"{name}.{key}"
        line = lines.get(dotted, lines.get(name, 0))
        if key not in known:
            raise ConfigError(f"{where}:{line}: {dotted}: unknown key", {"key": dotted, "line": line})
        annotation = known[key].type
        if not _check_type(value, annotation):
            raise ConfigError(
                f"{where}:{line}: {dotted}: expected {annotation}, got {type(value).__name__}",
                {"key": dotted, "line": line},
            )
        kwargs[key] = _coerce(value, annotation)
    section = cls(**kwargs)
    for key, problem in section.problems():
        dotted = f"{name}.{key}"
        line = lines.get(dotted, lines.get(f"{name}.{key.split('.')[0]}", lines.get(name, 0)))
        raise ConfigError(f"{where}:{line}: {dotted}: {problem}", {"key": dotted, "line": line})
    return section


def parse_override(text: str) -> Tuple[str, Any]:
    """Split ``a.b=value``; the value is parsed as a YAML scalar or list."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r}: empty key")
    try:
        return key, yaml.safe_load(value)
    except yaml.YAMLError as err:
        raise ConfigError(f"override {text!r}: {err}") from err


def apply_override(data: Dict[str, Any], text: str) -> Dict[str, Any]:
    key, value = parse_override(text)
    parts = key.split(".")
    if parts[0] not in _SECTIONS and parts[0] != "seed":
        raise ConfigError(f"<override>:0: {key}: unknown key", {"key": key})
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"<override>:0: {key}: {part} is not a mapping", {"key": key})
        node = child
    node[parts[-1]] = value
    return data


def load_config(path=None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read, override and validate a run configuration.

    Args:
        path: YAML file; None starts from the defaults.
        overrides: ``dotted.key=value`` strings applied after the file.

    Returns:
        RunConfig: the validated configuration.
    """
    where = "<defaults>"
    data: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    if path is not None:
        where = str(path)
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"{where}:0: cannot read config: {err}") from err
        try:
            node = yaml.compose(text)
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as err:
            mark = getattr(err, "problem_mark", None)
            line = mark.line + 1 if mark is not None else 0
            raise ConfigError(f"{where}:{line}: <yaml>: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError(f"{where}:1: <root>: must be a mapping")
        lines = _line_index(node)
    for text in overrides:
        data = apply_override(data, text)

    kwargs: Dict[str, Any] = {}
    for key, raw in data.items():
        line = lines.get(key, 0)
        if key == "seed":
            if not isinstance(raw, int) or isinstance(raw, bool) or raw < 0:
                raise ConfigError(f"{where}:{line}: seed: must be a non-negative integer", {"key": "seed", "line": line})
            kwargs["seed"] = raw
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], raw, lines, where)
        else:
            raise ConfigError(f"{where}:{line}: {key}: unknown key", {"key": key, "line": line})
    config = RunConfig(**kwargs, source=None if path is None else str(path))
    logger.debug("loaded config from %s with %d overrides", where, len(overrides))
    return config
