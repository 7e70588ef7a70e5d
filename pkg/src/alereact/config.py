"""Scenario files: a sectioned key-value grammar parsed with configparser.

Sections and keys::

    [scenario]     name, description
    [domain]       x = xmin xmax; y = ymin ymax; left/right/bottom/top = wall|free|slip|shear|periodic;
                   h_bulk (optional bulk edge length)
    [interfaces]   <id> = shape=circle|ellipse; center=cx cy; radius=r | axes=a b; vertices=J
    [physics]      any DimensionlessParams input (Re, Ca, Bi, ...); fluid = on|off;
                   clamp_gamma = on|off; sweep.<key> = v1 v2 ... (one run per value)
    [species]      network = default|none; init.<name> = value (default network);
                   <name> = kind=bulk; regions=plus minus; D.plus=..; D.minus=..; init.plus=..; init.minus=..
                   <name> = kind=surface; interface=1; D=..; omega=..; init=..
    [reactions]    <label> = interface=1; reactants=B_G C_G; product=A_G; k_r=..; lambda_c=..
    [couplings]    <label> = bulk=C; interface=1; side=plus|minus|both; surface=C_G; k_d=.. (or
                   k_d.plus, k_d.minus); lambda_a=..
    [permeability] <label> = bulk=C; interface=1; rule=constant; k=..
                   <label> = bulk=C_s; interface=1; rule=gated; controller=A_G; k_max=..; A0=..; beta=..
    [boundary]     <bulk species> = sides=left right; value=<expression in x, y, t>
    [time]         dt, t_end, picard_tol, picard_max_iter, regen_min_angle, regen_max_ratio
    [output]       snapshot_every; mass.<label> = name:weight name:weight ...

Values of ``init`` and ``value`` may be numbers or expressions in x, y (and t).
Lines starting with ``#`` or ``;`` are comments.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import ConfigError
from .mesh import BOUNDARY_KINDS, Domain
from .params import (AdsorptionCoupling, BulkSpecies, PermeabilityRule, Reaction, SpeciesNetworkConfig,
                     SurfaceSpecies, default_network, derive_parameters)
from .transport import DirichletRule

SECTIONS = ("scenario", "domain", "interfaces", "physics", "species", "reactions", "couplings",
            "permeability", "boundary", "time", "output")
PRESETS = ("relaxation", "cholesterol", "droplet-marangoni", "gating", "shear", "rising-bubble")


@dataclass(frozen=True)
class InterfaceSpec:
    shape: str
    center: tuple
    size: tuple               # (r,) for circles, (a, b) for ellipses
    vertices: int

    def polyline(self) -> np.ndarray:
        if self.shape == "circle":
            return geo.circle_polyline(self.center, self.size[0], self.vertices)
        return geo.ellipse_polyline(self.center, self.size, self.vertices)

    def describe(self) -> str:
        c = f"({self.center[0]:g}, {self.center[1]:g})"
        if self.shape == "circle":
            return f"circle center {c} radius {self.size[0]:g}, {self.vertices} vertices"
        return f"ellipse center {c} semi-axes {self.size[0]:g} x {self.size[1]:g}, {self.vertices} vertices"


@dataclass
class Scenario:
    name: str
    description: str
    domain: Domain
    boundary_kinds: dict
    interfaces: list
    h_bulk: float | None
    raw_params: dict
    fluid: bool
    network: SpeciesNetworkConfig
    dirichlet: tuple
    dt: float
    t_end: float
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    regen_min_angle: float = 10.0
    regen_max_ratio: float = 50.0
    clamp_gamma: bool = False
    snapshot_every: int = 0
    sweep: dict = field(default_factory=dict)
    source: str = ""

    @property
    def params(self):
        return derive_parameters(self.raw_params)

    def interface_spacing(self) -> float:
        if not self.interfaces:
            return 0.05
        return min(geo.perimeter(s.polyline()) / s.vertices for s in self.interfaces)

    def variants(self):
        """(suffix, scenario) pairs, one per combination of sweep values (or just self)."""
        if not self.sweep:
            return [("", self)]
        out = []
        for key, values in self.sweep.items():
            for v in values:
                sc = parse_scenario(self.source, [f"physics.{key}={v!r}"])
                out.append((f"{key}={v:g}", replace(sc, sweep={})))
        return out


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "yes", "true", "1"):
        return True
    if t in ("off", "no", "false", "0"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {text!r}")


def _float(text, key: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from exc


def _floats(text: str, key: str, n: int | None = None) -> tuple:
    vals = tuple(_float(t, key) for t in text.split())
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {text!r}")
    return vals


def _number_or_expr(text: str):
    try:
        return float(text)
    except ValueError:
        return text.strip()


def parse_fields(text: str, key: str) -> dict:
    """'a=1; b=x y' -> {'a': '1', 'b': 'x y'}."""
    out = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"{key}: malformed field {part!r} (expected name=value)")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _dotted(fields: dict, prefix: str) -> dict:
    return {k[len(prefix) + 1:]: v for k, v in fields.items() if k.startswith(prefix + ".")}


def _reader(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse scenario file: {exc}") from exc
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    return cp


def apply_overrides(text: str, overrides) -> str:
    """Apply 'section.key=value' overrides and return the new file text."""
    cp = _reader(text)
    for ov in overrides or ():
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override {ov!r} must look like section.key=value")
        lhs, value = ov.split("=", 1)
        section, key = lhs.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"override {ov!r}: unknown section {section!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key.strip(), value.strip())
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_scenario(text: str, overrides=()) -> Scenario:
    if overrides:
        text = apply_overrides(text, overrides)
    cp = _reader(text)
    sec = lambda name: dict(cp[name]) if cp.has_section(name) else {}

    meta = sec("scenario")
    dom = sec("domain")
    x0, x1 = _floats(dom.get("x", "-0.5 0.5"), "domain.x", 2)
    y0, y1 = _floats(dom.get("y", "-0.5 0.5"), "domain.y", 2)
    if not (x1 > x0 and y1 > y0):
        raise ConfigError("domain extents must be increasing")
    kinds = {}
    for side in ("left", "right", "bottom", "top"):
        k = dom.get(side, "wall").strip().lower()
        if k not in BOUNDARY_KINDS:
            raise ConfigError(f"domain.{side}: unknown boundary kind {k!r}")
        kinds[side] = k
    h_bulk = _float(dom["h_bulk"], "domain.h_bulk") if "h_bulk" in dom else None

    interfaces = []
    for ident in sorted(sec("interfaces"), key=lambda s: int(s) if s.isdigit() else 1 << 30):
        if not ident.isdigit():
            raise ConfigError(f"interfaces: keys must be 1, 2, ..., got {ident!r}")
        f = parse_fields(cp["interfaces"][ident], f"interfaces.{ident}")
        shape = f.get("shape", "circle").lower()
        center = _floats(f.get("center", "0 0"), f"interfaces.{ident}.center", 2)
        J = int(_float(f.get("vertices", "64"), f"interfaces.{ident}.vertices"))
        if shape == "circle":
            size = (_float(f.get("radius"), f"interfaces.{ident}.radius"),)
        elif shape == "ellipse":
            size = _floats(f.get("axes", ""), f"interfaces.{ident}.axes", 2)
        else:
            raise ConfigError(f"interfaces.{ident}: unknown shape {shape!r}")
        if min(size) <= 0 or J < 3:
            raise ConfigError(f"interfaces.{ident}: need positive size and at least 3 vertices")
        interfaces.append(InterfaceSpec(shape, center, size, J))
    if [int(i) for i in sorted(sec("interfaces"), key=int)] != list(range(1, len(interfaces) + 1)):
        raise ConfigError("interfaces must be numbered 1, 2, ... without gaps")

    phys = sec("physics")
    fluid = _bool(phys.pop("fluid", "on"), "physics.fluid")
    clamp = _bool(phys.pop("clamp_gamma", "off"), "physics.clamp_gamma")
    sweep = {}
    for k in [k for k in phys if k.startswith("sweep.")]:
        sweep[k[6:]] = _floats(phys.pop(k), k)
    raw = {k: _float(v, f"physics.{k}") for k, v in phys.items()}
    p = derive_parameters(raw)

    network = _parse_network(cp, p)
    dirichlet = []
    for name, value in sec("boundary").items():
        f = parse_fields(value, f"boundary.{name}")
        sides = tuple(f.get("sides", "").split())
        if not sides or any(s not in ("left", "right", "bottom", "top") for s in sides):
            raise ConfigError(f"boundary.{name}: sides must list left/right/bottom/top")
        if "value" not in f:
            raise ConfigError(f"boundary.{name}: missing value")
        dirichlet.append(DirichletRule(name, sides, _number_or_expr(f["value"])))

    tm = sec("time")
    if "dt" not in tm or "t_end" not in tm:
        raise ConfigError("[time] needs dt and t_end")
    dt = _float(tm["dt"], "time.dt")
    t_end = _float(tm["t_end"], "time.t_end")
    if dt <= 0 or t_end < 0:
        raise ConfigError("time.dt must be positive and time.t_end nonnegative")
    out = sec("output")
    return Scenario(
        name=meta.get("name", "scenario"), description=meta.get("description", ""),
        domain=Domain(x0, x1, y0, y1), boundary_kinds=kinds, interfaces=interfaces, h_bulk=h_bulk,
        raw_params=raw, fluid=fluid, network=network, dirichlet=tuple(dirichlet), dt=dt, t_end=t_end,
        picard_tol=_float(tm.get("picard_tol", 1e-10), "time.picard_tol"),
        picard_max_iter=int(_float(tm.get("picard_max_iter", 50), "time.picard_max_iter")),
        regen_min_angle=_float(tm.get("regen_min_angle", 10.0), "time.regen_min_angle"),
        regen_max_ratio=_float(tm.get("regen_max_ratio", 50.0), "time.regen_max_ratio"),
        clamp_gamma=clamp, snapshot_every=int(_float(out.get("snapshot_every", 0), "output.snapshot_every")),
        sweep=sweep, source=text)


def _parse_network(cp, p) -> SpeciesNetworkConfig:
    spec = dict(cp["species"]) if cp.has_section("species") else {}
    base = spec.pop("network", "none").strip().lower()
    init = {k[5:]: _number_or_expr(spec.pop(k)) for k in [k for k in spec if k.startswith("init.")]}
    if base == "default":
        net = default_network(p, init)
    elif base == "none":
        if init:
            raise ConfigError("species.init.* keys need network = default")
        net = SpeciesNetworkConfig()
    else:
        raise ConfigError(f"species.network must be default or none, got {base!r}")

    bulk, surf = list(net.bulk_species), list(net.surface_species)
    for name, value in spec.items():
        f = parse_fields(value, f"species.{name}")
        kind = f.get("kind", "").lower()
        U = _float(f["U"], f"species.{name}.U") if "U" in f else None
        if kind == "bulk":
            regions = tuple(f.get("regions", "plus minus").split())
            D = {k: _float(v, f"species.{name}.D.{k}") for k, v in _dotted(f, "D").items()}
            if "D" in f:
                D = {r: _float(f["D"], f"species.{name}.D") for r in regions} | D
            ini = {k: _number_or_expr(v) for k, v in _dotted(f, "init").items()}
            if "init" in f:
                ini = {r: _number_or_expr(f["init"]) for r in regions} | ini
            bulk.append(BulkSpecies(name, regions, D, ini, U))
        elif kind == "surface":
            surf.append(SurfaceSpecies(
                name, int(_float(f.get("interface", 1), f"species.{name}.interface")),
                _float(f.get("D", 1.0), f"species.{name}.D"), _float(f.get("omega", 1.0), f"species.{name}.omega"),
                _number_or_expr(f.get("init", "0")), U))
        else:
            raise ConfigError(f"species.{name}: kind must be bulk or surface")

    reactions = list(net.reactions)
    for label, value in (cp["reactions"].items() if cp.has_section("reactions") else ()):
        f = parse_fields(value, f"reactions.{label}")
        reactions.append(Reaction(int(_float(f.get("interface", 1), label)), tuple(f.get("reactants", "").split()),
                                  f.get("product", ""), _float(f.get("k_r", p.k_r), f"{label}.k_r"),
                                  _float(f.get("lambda_c", p.lambda_c), f"{label}.lambda_c")))
    couplings = list(net.adsorption_couplings)
    for label, value in (cp["couplings"].items() if cp.has_section("couplings") else ()):
        f = parse_fields(value, f"couplings.{label}")
        k_d = {k: _float(v, f"{label}.k_d.{k}") for k, v in _dotted(f, "k_d").items()}
        if "k_d" in f:
            k_d.setdefault("both", _float(f["k_d"], f"{label}.k_d"))
        if not k_d:
            k_d = {"plus": p.k_d_plus, "minus": p.k_d_minus}
        couplings.append(AdsorptionCoupling(f.get("bulk", ""), int(_float(f.get("interface", 1), label)),
                                            f.get("side", "both"), f.get("surface", ""), k_d,
                                            _float(f.get("lambda_a", p.lambda_a), f"{label}.lambda_a")))
    perms = list(net.permeability_rules)
    for label, value in (cp["permeability"].items() if cp.has_section("permeability") else ()):
        f = parse_fields(value, f"permeability.{label}")
        perms.append(PermeabilityRule(
            f.get("bulk", ""), int(_float(f.get("interface", 1), label)), f.get("rule", "constant"),
            _float(f.get("k", 1.0), f"{label}.k"), f.get("controller"),
            _float(f.get("k_max", 0.0), f"{label}.k_max"), _float(f.get("A0", 0.0), f"{label}.A0"),
            _float(f.get("beta", 1.0), f"{label}.beta")))

    combos = list(net.mass_combinations)
    out = dict(cp["output"]) if cp.has_section("output") else {}
    for key in [k for k in out if k.startswith("mass.")]:
        weights = {}
        for term in out[key].split():
            name, _, w = term.partition(":")
            weights[name] = _float(w or "1", key)
        combos = [c for c in combos if c[0] != key[5:]] + [(key[5:], weights)]
    return replace(net, bulk_species=tuple(bulk), surface_species=tuple(surf), reactions=tuple(reactions),
                   adsorption_couplings=tuple(couplings), permeability_rules=tuple(perms),
                   mass_combinations=tuple(combos))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown scenario {name!r}; choose one of {', '.join(PRESETS)}")
    return resources.files("alereact.scenarios").joinpath(f"{name}.ini").read_text()


def load_scenario(path=None, preset: str | None = None, overrides=()) -> Scenario:
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of a config path or a preset name")
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
    else:
        text = preset_text(preset)
    return parse_scenario(text, overrides)


def describe(sc: Scenario) -> str:
    """Human-readable summary of a scenario."""
    p = sc.params
    lines = [f"scenario: {sc.name}"]
    if sc.description:
        lines.append(f"  {sc.description}")
    d = sc.domain
    lines.append(f"domain: [{d.xmin:g}, {d.xmax:g}] x [{d.ymin:g}, {d.ymax:g}]")
    for side in ("left", "right", "bottom", "top"):
        kind = sc.boundary_kinds[side]
        text = {"wall": "no-slip wall u = 0", "free": "free outflow T.n = 0", "slip": "slip u.n = 0",
                "shear": "Dirichlet shear u = (y, 0)", "periodic": "periodic"}[kind]
        lines.append(f"  {side}: {kind} ({text})")
    for i, s in enumerate(sc.interfaces, 1):
        lines.append(f"interface {i}: {s.describe()}")
    lines.append(f"fluid: {'on' if sc.fluid else 'off (u = 0, w = 0, frozen mesh)'}")
    lines.append(f"  Re={p.Re:g} Ca={p.Ca:g} We={p.We:g} rho+={p.rho_plus:g} rho-={p.rho_minus:g} "
                 f"eta+={p.eta_plus:g} eta-={p.eta_minus:g}")
    if p.gravity != 0:
        lines.append(f"  gravity: rho+-g = {p.gravity:g} rho+- e_y")
    lines.append(f"  Bi={p.Bi:g} Da={p.Da:g} Pe={p.Pe:g} Pe_G={p.Pe_G:g} E={p.E:g}")
    net = sc.network
    for b in net.bulk_species:
        lines.append(f"bulk {b.name}: regions {' '.join(b.regions)}; D {dict(b.D)}; init {dict(b.init)}")
    for s in net.surface_species:
        lines.append(f"surface {s.name} on interface {s.interface}: D={s.D:g} omega={s.omega:g} init={s.init}")
    for r in net.reactions:
        lines.append(f"reaction on {r.interface}: {' + '.join(r.reactants)} <=> {r.product} "
                     f"(k_r={r.k_r:g}, lambda_c={r.lambda_c:g})")
    for c in net.adsorption_couplings:
        lines.append(f"adsorption {c.bulk} -> {c.surface} on interface {c.interface} ({c.side} side), "
                     f"lambda_a={c.lambda_a:g}")
    for pr in net.permeability_rules:
        if pr.rule == "gated":
            lines.append(f"permeability of {pr.bulk} on {pr.interface}: gated by {pr.controller} "
                         f"(k_max={pr.k_max:g}, A0={pr.A0:g}, beta={pr.beta:g})")
        else:
            lines.append(f"permeability of {pr.bulk} on {pr.interface}: constant k={pr.k:g}")
    if not net.permeability_rules:
        lines.append("permeability: none (J_s = 0)")
    for rule in sc.dirichlet:
        lines.append(f"Dirichlet {rule.bulk} = {rule.value} on {' '.join(rule.sides)}")
    for key, vals in sc.sweep.items():
        lines.append(f"sweep {key}: {' '.join(f'{v:g}' for v in vals)}")
    lines.append(f"time: dt={sc.dt:g} until t={sc.t_end:g}")
    return "\n".join(lines)
