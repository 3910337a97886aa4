"""Asteroid catalogs: load, save, prune, synthesize; Keplerian Earth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .astrokernel import CONST, T_START, CartesianState, Constants, KeplerianElements, elements_state, propagate_kepler

__all__ = [
    "AsteroidRecord",
    "Catalog",
    "CatalogError",
    "PruneBounds",
    "SynthRanges",
    "load_catalog",
    "save_catalog",
    "prune",
    "synth_catalog",
    "earth_elements",
    "earth_state",
]


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class AsteroidRecord:
    id: int
    elements: KeplerianElements
    m0: float  # kg

    def __post_init__(self):
        if not self.m0 > 0:
            raise CatalogError(f"asteroid {self.id}: mass must be positive, got {self.m0}")


@dataclass(frozen=True)
class Catalog:
    records: tuple[AsteroidRecord, ...]
    source: str = ""
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        recs = tuple(self.records)
        object.__setattr__(self, "records", recs)
        index = {}
        for k, rec in enumerate(recs):
            if rec.id in index:
                raise CatalogError(f"duplicate asteroid id {rec.id}")
            index[rec.id] = k
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[AsteroidRecord]:
        return iter(self.records)

    def __contains__(self, ast_id) -> bool:
        return ast_id in self._index

    def __getitem__(self, ast_id: int) -> AsteroidRecord:
        try:
            return self.records[self._index[ast_id]]
        except KeyError:
            raise KeyError(f"asteroid {ast_id} not in catalog") from None

    @property
    def ids(self) -> np.ndarray:
        return np.array([r.id for r in self.records], dtype=np.int64)

    def element_arrays(self) -> dict[str, np.ndarray]:
        """Column arrays for vectorized propagation."""
        cols = {k: np.array([getattr(r.elements, k) for r in self.records]) for k in
                ("a", "e", "i", "raan", "argp", "M0", "ref_epoch")}
        cols["m0"] = np.array([r.m0 for r in self.records])
        return cols

    def states(self, t, const: Constants = CONST) -> tuple[np.ndarray, np.ndarray]:
        """Positions and velocities of every record at epoch ``t``; arrays of shape (n, 3)."""
        c = self.element_arrays()
        return elements_state(c["a"], c["e"], c["i"], c["raan"], c["argp"], c["M0"], c["ref_epoch"], t, const)

    def subset(self, ids: Sequence[int]) -> "Catalog":
        return Catalog(tuple(self[i] for i in ids), self.source)


def _parse_line(line: str, lineno: int) -> AsteroidRecord:
    cols = line.split()
    if len(cols) != 9:
        raise CatalogError(f"line {lineno}: expected 9 columns, found {len(cols)}")
    try:
        ast_id = int(cols[0])
        epoch, a, e, i, raan, argp, M, m = (float(c) for c in cols[1:])
    except ValueError as exc:
        raise CatalogError(f"line {lineno}: {exc}") from None
    try:
        el = KeplerianElements(a, e, math.radians(i), math.radians(raan), math.radians(argp), math.radians(M), epoch)
        return AsteroidRecord(ast_id, el, m)
    except ValueError as exc:
        raise CatalogError(f"line {lineno}: {exc}") from None


def load_catalog(path) -> Catalog:
    """Read a whitespace table ``id epoch_mjd a_au e i_deg raan_deg argp_deg M_deg mass_kg``."""
    path = Path(path)
    records = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            rec = _parse_line(line, lineno)
            if rec.id in seen:
                raise CatalogError(f"line {lineno}: duplicate asteroid id {rec.id}")
            seen.add(rec.id)
            records.append(rec)
    if not records:
        raise CatalogError("empty catalog")
    return Catalog(tuple(records), str(path))


def save_catalog(cat: Catalog, path) -> None:
    """Write ``cat``; floats use repr so a reload matches to the last few bits."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("# id epoch_mjd a_au e i_deg raan_deg argp_deg M_deg mass_kg\n")
        for r in cat:
            el = r.elements
            vals = (el.ref_epoch, el.a, el.e, math.degrees(el.i), math.degrees(el.raan),
                    math.degrees(el.argp), math.degrees(el.M0), r.m0)
            fh.write(f"{r.id} " + " ".join(repr(float(v)) for v in vals) + "\n")


@dataclass(frozen=True)
class PruneBounds:
    a_max: float = 2.8  # AU
    e_max: float = 0.1584
    i_max: float = math.radians(8.897)
    m_min: float = 5.8497e13  # kg

    def __post_init__(self):
        for name in ("a_max", "e_max", "i_max", "m_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"prune bound {name} must be positive")

    @classmethod
    def parse(cls, text: str) -> "PruneBounds":
        """From the CLI form ``a_max,e_max,i_max_deg,m_min``."""
        a, e, i, m = (float(v) for v in text.split(","))
        return cls(a, e, math.radians(i), m)


def prune(cat: Catalog, bounds: PruneBounds = PruneBounds()) -> Catalog:
    """Keep records inside the closed box a <= a_max, e <= e_max, i <= i_max, m0 >= m_min."""
    kept = tuple(
        r for r in cat
        if r.elements.a <= bounds.a_max
        and r.elements.e <= bounds.e_max
        and r.elements.i <= bounds.i_max
        and r.m0 >= bounds.m_min
    )
    return Catalog(kept, cat.source)


@dataclass(frozen=True)
class SynthRanges:
    """Sampling box for synthetic catalogs; angles in radians, masses log-uniform."""

    a: tuple[float, float] = (0.85, 1.35)
    e: tuple[float, float] = (0.0, 0.15)
    i: tuple[float, float] = (0.0, math.radians(8.5))
    raan: tuple[float, float] = (0.0, 2 * math.pi)
    argp: tuple[float, float] = (0.0, 2 * math.pi)
    M0: tuple[float, float] = (0.0, 2 * math.pi)
    mass: tuple[float, float] = (5.85e13, 5e14)
    ref_epoch: float = T_START

    def __post_init__(self):
        for name in ("a", "e", "i", "raan", "argp", "M0", "mass"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise CatalogError(f"degenerate range for {name}: {lo} > {hi}")
        if self.a[0] <= 0 or self.mass[0] <= 0:
            raise CatalogError("semi-major axis and mass ranges must be positive")
        if self.e[1] >= 1 or self.e[0] < 0:
            raise CatalogError("eccentricity range must lie in [0, 1)")
        if self.i[0] < 0 or self.i[1] > math.pi:
            raise CatalogError("inclination range must lie in [0, pi]")


def synth_catalog(n: int, seed: int, ranges: SynthRanges = SynthRanges()) -> Catalog:
    """Deterministic synthetic catalog with ids 1..n."""
    if n < 1:
        raise CatalogError("synthetic catalog needs n >= 1")
    rng = np.random.default_rng(seed)

    def draw(lo_hi):
        lo, hi = lo_hi
        return rng.uniform(lo, hi, n) if hi > lo else np.full(n, lo)

    a, e, i, raan, argp, M0 = (draw(getattr(ranges, k)) for k in ("a", "e", "i", "raan", "argp", "M0"))
    lm = draw((math.log(ranges.mass[0]), math.log(ranges.mass[1])))
    mass = np.clip(np.exp(lm), *ranges.mass)
    recs = tuple(
        AsteroidRecord(
            k + 1,
            KeplerianElements(*(float(c[k]) for c in (a, e, i, raan, argp, M0)), float(ranges.ref_epoch)),
            float(mass[k]),
        )
        for k in range(n)
    )
    return Catalog(recs, f"synth(n={n}, seed={seed})")


def earth_elements(M0_deg: float = 357.6, const: Constants = CONST) -> KeplerianElements:
    """Keplerian Earth at the mission start epoch."""
    return KeplerianElements(1.0, 0.0167, 0.0, 0.0, math.radians(102.94), math.radians(M0_deg), const.t_start)


EARTH = earth_elements()


def earth_state(t: float, earth: KeplerianElements = EARTH, const: Constants = CONST) -> CartesianState:
    return propagate_kepler(earth, t, const)
