"""Metal stack data, line allocations and per-cell wire conductances.

Lengths are in nm, resistivity in ohm*nm, so t*W/(rho*L) comes out in
siemens directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple

# Driver output resistance used when none is given.  Not a published number;
# see README ("Calibration") for how it was chosen and how results move with it.
DEFAULT_R_DRIVER = 0.1

# Which cell dimension a bit-line segment runs along.
#   "w_cell": BL segment length w_cell, line width taken out of l_cell
#   "l_cell": BL segment length l_cell, line width taken out of w_cell
BL_ALONG_CHOICES = ("w_cell", "l_cell")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class MetalLayerSpec:
    name: str
    thickness: float
    min_width: float
    min_spacing: float
    resistivity: float
    direction: str

    def __post_init__(self):
        for f in ("thickness", "min_width", "min_spacing", "resistivity"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{self.name}: {f} must be positive")
        if self.direction not in ("H", "V"):
            raise ValueError(f"{self.name}: direction must be H or V")

    @property
    def pitch(self) -> float:
        return self.min_width + self.min_spacing


@dataclass(frozen=True)
class ViaSpec:
    name: str
    resistance: float
    size: float
    min_spacing: float

    def __post_init__(self):
        if not self.resistance > 0:
            raise ValueError(f"{self.name}: resistance must be positive")


@dataclass(frozen=True)
class MetalStack:
    metals: Mapping[str, MetalLayerSpec]
    vias: Mapping[str, ViaSpec]

    def layer(self, name: str) -> MetalLayerSpec:
        try:
            return self.metals[name]
        except KeyError:
            raise KeyError(f"unknown metal layer {name!r}") from None

    def level(self, name: str) -> int:
        return int(name.lstrip("Mm"))

    def via_between(self, lo: int, hi: int) -> ViaSpec:
        return self.vias[f"V{lo}{hi}"]

    @classmethod
    def from_dict(cls, d: dict) -> "MetalStack":
        metals = {}
        for m in d["metals"]:
            spec = MetalLayerSpec(
                name=m["name"], thickness=float(m["thickness"]),
                min_width=float(m["min_width"]), min_spacing=float(m["min_spacing"]),
                resistivity=float(m["resistivity"]), direction=m["direction"])
            metals[spec.name] = spec
        vias = {}
        for v in d.get("vias", []):
            spec = ViaSpec(v["name"], float(v["resistance"]), float(v["size"]),
                           float(v["min_spacing"]))
            vias[spec.name] = spec
        return cls(metals, vias)


def load_stack(path=None) -> MetalStack:
    """Load a metal/via table from JSON; the bundled ASAP7 table by default."""
    if path is None:
        text = resources.files("xbar").joinpath("data/asap7.json").read_text()
    else:
        text = Path(path).read_text()
    return MetalStack.from_dict(json.loads(text))


ASAP7 = load_stack()


@dataclass(frozen=True)
class LineConfiguration:
    name: str
    wlt_layers: Tuple[str, ...]
    bl_layers: Tuple[str, ...]
    wlb_layers: Tuple[str, ...]
    bl_along: str = "w_cell"
    via_aware: bool = False
    stack: MetalStack = field(default=ASAP7, compare=False, repr=False)

    def __post_init__(self):
        sets = [set(self.wlt_layers), set(self.bl_layers), set(self.wlb_layers)]
        if not all(sets):
            raise ValueError("every line needs at least one metal layer")
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("a metal layer can only be allocated to one line")
        for name in self.wlt_layers + self.bl_layers + self.wlb_layers:
            self.stack.layer(name)
        if self.bl_along not in BL_ALONG_CHOICES:
            raise ValueError(f"bl_along must be one of {BL_ALONG_CHOICES}")

    def with_options(self, **kw) -> "LineConfiguration":
        return replace(self, **kw)


CONFIG1 = LineConfiguration("cfg1", ("M3",), ("M2",), ("M1",))
CONFIG2 = LineConfiguration("cfg2", ("M3", "M6", "M8"), ("M2", "M4", "M5"), ("M1", "M7", "M9"))
CONFIG3 = LineConfiguration("cfg3", ("M3", "M4", "M6", "M8"), ("M2",), ("M1", "M5", "M7", "M9"))
BUILTIN_CONFIGS = {"cfg1": CONFIG1, "cfg2": CONFIG2, "cfg3": CONFIG3,
                   "1": CONFIG1, "2": CONFIG2, "3": CONFIG3}


def get_config(key) -> LineConfiguration:
    if isinstance(key, LineConfiguration):
        return key
    k = str(key).lower()
    if k in BUILTIN_CONFIGS:
        return BUILTIN_CONFIGS[k]
    p = Path(str(key))
    if p.exists():
        return load_line_config(p)
    raise KeyError(f"unknown line configuration {key!r}")


def load_line_config(path, stack: Optional[MetalStack] = None) -> LineConfiguration:
    d = json.loads(Path(path).read_text())
    if stack is None:
        stack = load_stack(d["stack"]) if "stack" in d else ASAP7
    return LineConfiguration(
        name=d.get("name", Path(path).stem),
        wlt_layers=tuple(d["wlt"]), bl_layers=tuple(d["bl"]), wlb_layers=tuple(d["wlb"]),
        bl_along=d.get("bl_along", "w_cell"), via_aware=bool(d.get("via_aware", False)),
        stack=stack)


@dataclass(frozen=True)
class SubarrayGeometry:
    n_row: int
    n_column: int
    w_cell: float
    l_cell: float
    r_driver: float = DEFAULT_R_DRIVER

    def __post_init__(self):
        if self.n_row < 1 or self.n_column < 1:
            raise GeometryError("need at least one row and one column")
        if not (self.w_cell > 0 and self.l_cell > 0):
            raise GeometryError("cell dimensions must be positive")
        if self.r_driver < 0:
            raise GeometryError("driver resistance cannot be negative")

    def resized(self, **kw) -> "SubarrayGeometry":
        return replace(self, **kw)


def _pitch(layers: Iterable[MetalLayerSpec]) -> float:
    return max(l.pitch for l in layers)


def min_cell_pitch(config: LineConfiguration) -> Tuple[float, float]:
    """(w_min, l_min): widest pitch among the BL layers and among the WL layers."""
    st = config.stack
    w_min = _pitch(st.layer(n) for n in config.bl_layers)
    l_min = _pitch(st.layer(n) for n in config.wlt_layers + config.wlb_layers)
    return w_min, l_min


def make_geometry(config: LineConfiguration, n_row: int, n_column: int,
                  l_mult: float = 4.0, w_mult: float = 1.0,
                  r_driver: float = DEFAULT_R_DRIVER) -> SubarrayGeometry:
    """Geometry with the cell sized in multiples of the configuration's minimum pitch."""
    w_min, l_min = min_cell_pitch(config)
    return SubarrayGeometry(n_row, n_column, w_mult * w_min, l_mult * l_min, r_driver)


def metal_segment_conductance(layer: MetalLayerSpec, length: float, width: float) -> float:
    if not length > 0:
        raise GeometryError("segment length must be positive")
    if width < layer.min_width * (1 - 1e-12):
        raise GeometryError(f"{layer.name}: width {width} nm below minimum {layer.min_width} nm")
    return layer.thickness * width / (layer.resistivity * length)


def usable_width(layers, budget: float) -> float:
    """Line width available inside one cell pitch."""
    widest = max(layers, key=lambda l: l.min_width)
    return budget - widest.min_spacing


def _via_stack_resistance(stack: MetalStack, base: int, level: int) -> float:
    r = 0.0
    for k in range(base, level):
        r += stack.via_between(k, k + 1).resistance
    return r


def line_conductance(config: LineConfiguration, layer_names, length: float,
                     budget: float) -> float:
    """Per-cell conductance of a line built from parallel metal layers."""
    st = config.stack
    layers = [st.layer(n) for n in layer_names]
    width = usable_width(layers, budget)
    if width <= 0:
        raise GeometryError(f"no room for a line in a {budget} nm pitch")
    if not config.via_aware:
        return sum(metal_segment_conductance(l, length, width) for l in layers)
    base = min(st.level(l.name) for l in layers)
    g = 0.0
    for l in layers:
        gs = metal_segment_conductance(l, length, width)
        r_via = _via_stack_resistance(st, base, st.level(l.name))
        g += 1.0 / (1.0 / gs + r_via)
    return g


def line_conductances(config: LineConfiguration, geom: SubarrayGeometry) -> Dict[str, float]:
    """Per-cell segment conductances of the three line families."""
    w, l = geom.w_cell, geom.l_cell
    g_wlt = line_conductance(config, config.wlt_layers, w, l)
    g_wlb = line_conductance(config, config.wlb_layers, w, l)
    if config.bl_along == "w_cell":
        g_bl = line_conductance(config, config.bl_layers, w, l)
    else:
        g_bl = line_conductance(config, config.bl_layers, l, w)
    return {"wlt": g_wlt, "bl": g_bl, "wlb": g_wlb}


def line_config_conductances(config: LineConfiguration, geom: SubarrayGeometry) -> Tuple[float, float]:
    """(g_x, g_y): bit-line and word-line segment conductance per cell."""
    g = line_conductances(config, geom)
    return g["bl"], g["wlt"]
