"""Dimensionless parameters and the declarative species network.

``DimensionlessParams`` holds the global dimensionless groups of one run.
``SpeciesNetworkConfig`` describes which bulk and surface species exist,
where they live and how they react; ``validate_network`` resolves it
against the region/interface layout of a mesh.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

from .errors import ConfigError, NetworkError

# keys that must be supplied (strictly positive)
REQUIRED_POSITIVE = (
    "Re", "Ca", "Bi", "Da", "Pe", "Pe_G",
    "rho_plus", "rho_minus", "eta_plus", "eta_minus",
)
# optional keys with defaults; strictly positive
OPTIONAL_POSITIVE = {
    "lambda_a": 1.0, "lambda_c": 1.0,
    "omega_a": 1.0, "omega_b": 1.0, "omega_c": 1.0,
    "D_C_plus": 1.0, "D_C_minus": 1.0, "D_A": 1.0, "D_B": 1.0, "D_CG": 1.0,
}
# rate constants and the elasticity number may be switched off with 0
OPTIONAL_NONNEGATIVE = {"E": None, "k_r": 1.0, "k_d_plus": 1.0, "k_d_minus": 1.0}
SIGNED = {"gravity": 0.0}
POTENTIALS = ("U_C", "U_A", "U_B", "U_CG")
DERIVED = ("We", "k_f", "k_ad_plus", "k_ad_minus")

_REL = 1e-12


@dataclass(frozen=True)
class DimensionlessParams:
    Re: float
    Ca: float
    We: float
    Bi: float
    Da: float
    Pe: float
    Pe_G: float
    E: float
    rho_plus: float
    rho_minus: float
    eta_plus: float
    eta_minus: float
    lambda_a: float
    lambda_c: float
    omega_a: float
    omega_b: float
    omega_c: float
    k_r: float
    k_d_plus: float
    k_d_minus: float
    k_f: float
    k_ad_plus: float
    k_ad_minus: float
    D_C_plus: float
    D_C_minus: float
    D_A: float
    D_B: float
    D_CG: float
    gravity: float
    U_C: float
    U_A: float
    U_B: float
    U_CG: float

    def as_dict(self) -> dict:
        return asdict(self)


def _number(raw: Mapping, key: str) -> float:
    try:
        val = float(raw[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"parameter {key!r} is not a number: {raw[key]!r}") from exc
    if not math.isfinite(val):
        raise ConfigError(f"parameter {key!r} must be finite")
    return val


def _check_derived(name: str, given: float, expected: float) -> None:
    if abs(given - expected) > _REL * max(abs(expected), 1e-300):
        raise ConfigError(f"explicit {name}={given!r} inconsistent with derived value {expected!r}")


def derive_parameters(raw: Mapping) -> DimensionlessParams:
    """Fill derived constants (We, k_f, k_ad) and default potentials from raw values.

    ``k_d`` may be given as a shorthand for both ``k_d_plus`` and ``k_d_minus``.
    Explicit derived values are accepted only if they agree with the identities.
    """
    raw = dict(raw)
    if "k_d" in raw:
        raw.setdefault("k_d_plus", raw["k_d"])
        raw.setdefault("k_d_minus", raw["k_d"])
    vals: dict[str, float] = {}
    for key in REQUIRED_POSITIVE:
        if key not in raw:
            raise ConfigError(f"missing required parameter {key!r}")
        vals[key] = _number(raw, key)
        if vals[key] <= 0:
            raise ConfigError(f"parameter {key!r} must be positive, got {vals[key]}")
    for key, default in OPTIONAL_POSITIVE.items():
        vals[key] = _number(raw, key) if key in raw else default
        if vals[key] <= 0:
            raise ConfigError(f"parameter {key!r} must be positive, got {vals[key]}")
    for key, default in OPTIONAL_NONNEGATIVE.items():
        if key not in raw:
            if default is None:
                raise ConfigError(f"missing required parameter {key!r}")
            vals[key] = default
        else:
            vals[key] = _number(raw, key)
        if vals[key] < 0:
            raise ConfigError(f"parameter {key!r} must be nonnegative, got {vals[key]}")
    for key, default in SIGNED.items():
        vals[key] = _number(raw, key) if key in raw else default

    vals["We"] = vals["Re"] * vals["Ca"]
    vals["k_f"] = vals["lambda_c"] * vals["k_r"]
    vals["k_ad_plus"] = vals["lambda_a"] * vals["k_d_plus"]
    vals["k_ad_minus"] = vals["lambda_a"] * vals["k_d_minus"]
    for key in DERIVED:
        if key in raw:
            _check_derived(key, _number(raw, key), vals[key])

    # standard potentials: free choice per conserved quantity, the rest follow from lambda_a, lambda_c
    U_C = _number(raw, "U_C") if "U_C" in raw else 0.0
    U_CG = _number(raw, "U_CG") if "U_CG" in raw else U_C - math.log(vals["lambda_a"])
    U_B = _number(raw, "U_B") if "U_B" in raw else U_CG
    U_A = _number(raw, "U_A") if "U_A" in raw else U_B + U_CG - math.log(vals["lambda_c"])
    vals.update(U_C=U_C, U_CG=U_CG, U_B=U_B, U_A=U_A)
    return DimensionlessParams(**vals)


# ----------------------------------------------------------------------------
# species network

@dataclass(frozen=True)
class BulkSpecies:
    name: str
    regions: tuple            # region selectors: "plus", "minus", "minus<i>"
    D: Mapping                # selector -> diffusivity
    init: Mapping             # selector -> number or expression in x, y
    U: float | None = None


@dataclass(frozen=True)
class SurfaceSpecies:
    name: str
    interface: int
    D: float
    omega: float = 1.0
    init: float | str = 0.0
    U: float | None = None


@dataclass(frozen=True)
class Reaction:
    """Reversible surface reaction ``reactants[0] + reactants[1] <=> product``."""
    interface: int
    reactants: tuple
    product: str
    k_r: float
    lambda_c: float


@dataclass(frozen=True)
class AdsorptionCoupling:
    bulk: str
    interface: int
    side: str                 # plus | minus | both
    surface: str
    k_d: Mapping              # side -> desorption rate
    lambda_a: float


@dataclass(frozen=True)
class PermeabilityRule:
    bulk: str
    interface: int
    rule: str = "constant"    # constant | gated
    k: float = 1.0
    controller: str | None = None
    k_max: float = 0.0
    A0: float = 0.0
    beta: float = 1.0


@dataclass(frozen=True)
class SpeciesNetworkConfig:
    bulk_species: tuple = ()
    surface_species: tuple = ()
    reactions: tuple = ()
    adsorption_couplings: tuple = ()
    permeability_rules: tuple = ()
    # label -> {species name: weight}; bulk species enter with the 1/Da factor
    mass_combinations: tuple = ()


def default_network(p: DimensionlessParams, init: Mapping | None = None,
                    permeability_k: float = 1.0) -> SpeciesNetworkConfig:
    """Single interface with C_G + B_G <=> A_G, two-sided adsorption of C and constant permeability."""
    init = dict(init or {})
    bulk = BulkSpecies(
        "C", ("plus", "minus"), {"plus": p.D_C_plus, "minus": p.D_C_minus},
        {"plus": init.get("C_plus", init.get("C", 0.0)),
         "minus": init.get("C_minus", init.get("C", 0.0))}, U=p.U_C)
    surf = (
        SurfaceSpecies("A_G", 1, p.D_A, p.omega_a, init.get("A_G", 0.0), U=p.U_A),
        SurfaceSpecies("B_G", 1, p.D_B, p.omega_b, init.get("B_G", 0.0), U=p.U_B),
        SurfaceSpecies("C_G", 1, p.D_CG, p.omega_c, init.get("C_G", 0.0), U=p.U_CG),
    )
    rx = (Reaction(1, ("B_G", "C_G"), "A_G", p.k_r, p.lambda_c),)
    ads = (AdsorptionCoupling("C", 1, "both", "C_G",
                              {"plus": p.k_d_plus, "minus": p.k_d_minus}, p.lambda_a),)
    perm = (PermeabilityRule("C", 1, "constant", k=permeability_k),)
    combos = (("m_AB", {"A_G": 1.0, "B_G": 1.0}),
              ("m_ACC", {"A_G": 1.0, "C_G": 1.0, "C": 1.0}))
    return SpeciesNetworkConfig((bulk,), surf, rx, ads, perm, combos)


# ----------------------------------------------------------------------------
# normalized network with integer indices

@dataclass
class NBulk:
    name: str
    regions: tuple            # region labels (0 = exterior, i = inside interface i)
    D: dict                   # region label -> diffusivity
    init: dict                # region label -> value/expression
    U: float


@dataclass
class NSurface:
    name: str
    interface: int            # 0-based interface index
    D: float
    omega: float
    init: float | str
    U: float


@dataclass
class NReaction:
    interface: int
    reactants: tuple          # two indices into surface list
    product: int
    k_r: float
    k_f: float
    lambda_c: float


@dataclass
class NCoupling:
    bulk: int
    interface: int
    surface: int
    sides: tuple              # tuple of (region label, sign +1/-1, k_d, k_ad)
    lambda_a: float


@dataclass
class NPermeability:
    bulk: int
    interface: int
    rule: str
    k: float
    controller: int | None
    k_max: float
    A0: float
    beta: float


@dataclass
class CheckedNetwork:
    bulk: list
    surface: list
    reactions: list
    couplings: list
    permeability: list
    mass_combinations: list = field(default_factory=list)   # (label, [(kind, idx, weight)])
    n_interfaces: int = 1

    def surface_on(self, interface: int) -> list:
        return [k for k, s in enumerate(self.surface) if s.interface == interface]

    def bulk_index(self, name: str) -> int:
        return [b.name for b in self.bulk].index(name)

    def surface_index(self, name: str) -> int:
        return [s.name for s in self.surface].index(name)


def resolve_region(selector: str, n_interfaces: int) -> tuple:
    sel = selector.strip().lower()
    if sel == "plus":
        return (0,)
    if sel == "minus":
        return tuple(range(1, n_interfaces + 1))
    if sel.startswith("minus") and sel[5:].isdigit():
        i = int(sel[5:])
        if 1 <= i <= n_interfaces:
            return (i,)
    raise NetworkError(f"unknown region {selector!r}")


def _per_region(mapping: Mapping, n_interfaces: int, what: str) -> dict:
    out = {}
    # generic selectors first so that specific ones override them
    for sel in sorted(mapping, key=lambda s: (s.strip().lower() != "minus", s)):
        for r in resolve_region(sel, n_interfaces):
            out[r] = mapping[sel]
    return out


def _resolve_potentials(net: CheckedNetwork) -> None:
    """Default standard potentials consistent with every lambda_a and lambda_c in the network."""
    U_b = [b.U for b in net.bulk]
    U_s = [s.U for s in net.surface]
    U_b = [0.0 if u is None else u for u in U_b]
    for _ in range(len(net.surface) + 2):
        for c in net.couplings:
            if U_s[c.surface] is None:
                U_s[c.surface] = U_b[c.bulk] - math.log(c.lambda_a)
        for r in net.reactions:
            p, (a, b) = r.product, r.reactants
            if U_s[a] is None and U_s[b] is not None:
                if U_s[p] is not None:
                    U_s[a] = U_s[p] + math.log(r.lambda_c) - U_s[b]
                else:
                    U_s[a] = U_s[b]
            if U_s[b] is None and U_s[a] is not None:
                if U_s[p] is not None:
                    U_s[b] = U_s[p] + math.log(r.lambda_c) - U_s[a]
                else:
                    U_s[b] = U_s[a]
            if U_s[p] is None and U_s[a] is not None and U_s[b] is not None:
                U_s[p] = U_s[a] + U_s[b] - math.log(r.lambda_c)
    for b, u in zip(net.bulk, U_b):
        b.U = u
    for s, u in zip(net.surface, U_s):
        s.U = 0.0 if u is None else u


def validate_network(cfg: SpeciesNetworkConfig, n_interfaces: int) -> CheckedNetwork:
    """Resolve names and region selectors of ``cfg`` against a mesh with ``n_interfaces`` interfaces.

    Regions are labelled 0 (exterior, plus side of every interface) and i for the
    interior of interface i (its minus side).
    """
    names = [b.name for b in cfg.bulk_species] + [s.name for s in cfg.surface_species]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise NetworkError(f"duplicate species names: {sorted(dup)}")

    bulk = []
    for b in cfg.bulk_species:
        regions = tuple(sorted({r for sel in b.regions for r in resolve_region(sel, n_interfaces)}))
        D = _per_region(b.D, n_interfaces, "D")
        init = _per_region(b.init, n_interfaces, "init")
        for r in regions:
            if r not in D:
                raise NetworkError(f"bulk species {b.name!r} lacks a diffusivity in region {r}")
            if float(D[r]) <= 0:
                raise NetworkError(f"bulk species {b.name!r} has nonpositive diffusivity")
            init.setdefault(r, 0.0)
        bulk.append(NBulk(b.name, regions, {r: float(D[r]) for r in regions},
                          {r: init[r] for r in regions}, b.U))
    bnames = [b.name for b in bulk]

    surface = []
    for s in cfg.surface_species:
        if not 1 <= int(s.interface) <= n_interfaces:
            raise NetworkError(f"surface species {s.name!r} on unknown interface {s.interface}")
        if s.D <= 0 or s.omega <= 0:
            raise NetworkError(f"surface species {s.name!r} needs positive D and omega")
        surface.append(NSurface(s.name, int(s.interface) - 1, float(s.D), float(s.omega), s.init, s.U))
    snames = [s.name for s in surface]

    def surf_idx(name, iface, ctx):
        if name not in snames:
            raise NetworkError(f"{ctx}: unknown surface species {name!r}")
        k = snames.index(name)
        if surface[k].interface != iface:
            raise NetworkError(f"{ctx}: species {name!r} does not live on interface {iface + 1}")
        return k

    def bulk_idx(name, ctx):
        if name not in bnames:
            raise NetworkError(f"{ctx}: unknown bulk species {name!r}")
        return bnames.index(name)

    def iface_idx(i, ctx):
        if not 1 <= int(i) <= n_interfaces:
            raise NetworkError(f"{ctx}: unknown interface {i}")
        return int(i) - 1

    reactions = []
    for r in cfg.reactions:
        i = iface_idx(r.interface, "reaction")
        if len(r.reactants) != 2:
            raise NetworkError("reactions need exactly two reactants")
        a, b = (surf_idx(n, i, "reaction") for n in r.reactants)
        p = surf_idx(r.product, i, "reaction")
        if r.k_r < 0 or r.lambda_c <= 0:
            raise NetworkError("reaction needs k_r >= 0 and lambda_c > 0")
        reactions.append(NReaction(i, (a, b), p, float(r.k_r), float(r.lambda_c * r.k_r), float(r.lambda_c)))

    couplings = []
    for c in cfg.adsorption_couplings:
        i = iface_idx(c.interface, "coupling")
        kb = bulk_idx(c.bulk, "coupling")
        ks = surf_idx(c.surface, i, "coupling")
        side = c.side.strip().lower()
        if side not in ("plus", "minus", "both"):
            raise NetworkError(f"coupling side must be plus, minus or both, got {c.side!r}")
        sides = []
        for sname, region, sign in (("plus", 0, 1), ("minus", i + 1, -1)):
            if side not in (sname, "both"):
                continue
            if region not in bulk[kb].regions:
                raise NetworkError(
                    f"coupling of {c.bulk!r} on the {sname} side of interface {i + 1}: "
                    f"species is not defined in the adjacent region")
            k_d = float(c.k_d.get(sname, c.k_d.get("both", 0.0)) if isinstance(c.k_d, Mapping) else c.k_d)
            if k_d < 0:
                raise NetworkError("desorption rate must be nonnegative")
            sides.append((region, sign, k_d, c.lambda_a * k_d))
        couplings.append(NCoupling(kb, i, ks, tuple(sides), float(c.lambda_a)))

    perms = []
    for p in cfg.permeability_rules:
        i = iface_idx(p.interface, "permeability")
        kb = bulk_idx(p.bulk, "permeability")
        if not {0, i + 1} <= set(bulk[kb].regions):
            raise NetworkError(f"permeable species {p.bulk!r} must live on both sides of interface {i + 1}")
        rule = p.rule.strip().lower()
        ctrl = None
        if rule == "gated":
            if p.controller is None:
                raise NetworkError("gated permeability needs a controller species")
            ctrl = surf_idx(p.controller, i, "permeability")
        elif rule != "constant":
            raise NetworkError(f"unknown permeability rule {p.rule!r}")
        perms.append(NPermeability(kb, i, rule, float(p.k), ctrl, float(p.k_max), float(p.A0), float(p.beta)))

    combos = []
    for label, weights in cfg.mass_combinations:
        terms = []
        for name, w in weights.items():
            if name in bnames:
                terms.append(("bulk", bnames.index(name), float(w)))
            elif name in snames:
                terms.append(("surface", snames.index(name), float(w)))
            else:
                raise NetworkError(f"mass combination {label!r}: unknown species {name!r}")
        combos.append((label, terms))

    net = CheckedNetwork(bulk, surface, reactions, couplings, perms, combos, n_interfaces)
    _resolve_potentials(net)
    return net
