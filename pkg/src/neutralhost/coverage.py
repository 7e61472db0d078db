"""
Received-signal maps for combined macro and small-cell deployments.

Per-site RSS is ``tx_power - pathloss + shadowing`` with a log-distance
pathloss ``A + B*log10(d_km)`` per tier and i.i.d. Gaussian shadowing (in dB)
drawn per (seed, site, grid point).  The map keeps, at every point, the
strongest signal and the site that provides it.

Positions are metres in a local frame anchored at the area's south-east
corner; grid points sit at integer multiples of the resolution.
"""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import GeometryMismatch, SiteFileError

MACRO = "Macro"
SMALL = "Small"
TIERS = {"macro": MACRO, "small": SMALL}

MACRO_POWER_DBM = 46.0
SMALL_POWER_DBM = 24.0
CLOSEST_POINT_RSS_DBM = -42.0

SENTINEL = -np.inf
SITE_COLUMNS = ("site_id", "x_m", "y_m", "tier", "power_dbm", "tag")


class SiteOutOfBounds(UserWarning):
    pass


@dataclass(frozen=True)
class TierModel:
    a_db: float
    b_db: float
    sigma_db: float

    def __post_init__(self):
        if not self.b_db > 0:
            raise ValueError("pathloss slope must be positive")
        if not self.sigma_db >= 0:
            raise ValueError("shadowing sigma must be non-negative")


MACRO_MODEL = TierModel(128.1, 37.6, 8.0)
SMALL_MODEL = TierModel(140.7, 36.7, 10.0)


def calibrate_min_distance(tier: TierModel, tx_power_dbm: float, target_rss_dbm: float) -> float:
    """Distance in metres at which the shadowing-free RSS equals the target."""
    return 1000.0 * 10 ** ((tx_power_dbm - target_rss_dbm - tier.a_db) / tier.b_db)


DEFAULT_MIN_DISTANCE_M = calibrate_min_distance(SMALL_MODEL, SMALL_POWER_DBM, CLOSEST_POINT_RSS_DBM)


@dataclass(frozen=True)
class ChannelModel:
    macro: TierModel = MACRO_MODEL
    small: TierModel = SMALL_MODEL
    min_distance_m: float = DEFAULT_MIN_DISTANCE_M
    seed: int = 0

    def __post_init__(self):
        if not self.min_distance_m > 0:
            raise ValueError("min_distance_m must be positive")

    def tier(self, tier: str) -> TierModel:
        return self.macro if tier == MACRO else self.small

    def without_shadowing(self) -> "ChannelModel":
        return replace(self, macro=replace(self.macro, sigma_db=0.0),
                       small=replace(self.small, sigma_db=0.0))


def pathloss_db(model: ChannelModel, tier: str, distance_m):
    """Deterministic pathloss in dB; distances below the model minimum are clamped."""
    t = model.tier(tier)
    d = np.maximum(np.asarray(distance_m, dtype=float), model.min_distance_m)
    out = t.a_db + t.b_db * np.log10(d / 1000.0)
    return float(out) if out.ndim == 0 else out


# -- deployments -----------------------------------------------------------------

@dataclass(frozen=True)
class Site:
    id: str
    x_m: float
    y_m: float
    tier: str
    tx_power_dbm: float
    tag: str = ""

    def __post_init__(self):
        if self.tier not in (MACRO, SMALL):
            raise ValueError(f"unknown tier {self.tier!r}")
        if not math.isfinite(self.tx_power_dbm):
            raise ValueError("tx power must be finite")


@dataclass(frozen=True)
class Deployment:
    sites: tuple = ()
    area: tuple = (1000.0, 1000.0)
    origin: Optional[tuple] = None   # (lat, lon) of the anchor corner, metadata only

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        ids = [s.id for s in self.sites]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate site ids: {', '.join(dup)}")

    def select(self, keep) -> "Deployment":
        return replace(self, sites=tuple(s for s in self.sites if keep(s)))

    def macro_only(self) -> "Deployment":
        return self.select(lambda s: s.tier == MACRO)

    def with_small_tagged(self, *tags) -> "Deployment":
        return self.select(lambda s: s.tier == MACRO or s.tag in tags)

    def out_of_bounds(self) -> list[Site]:
        w, h = self.area
        return [s for s in self.sites if not (0 <= s.x_m <= w and 0 <= s.y_m <= h)]


def scenario_deployments(d: Deployment, subset_tag: str = "chain") -> dict[str, Deployment]:
    """Macro-only baseline, macro plus ``subset_tag`` small cells, and everything."""
    return {"baseline": d.macro_only(), "subset": d.with_small_tagged(subset_tag), "all": d}


def generate_synthetic_deployment(macro_count: int, small_count: int, chain_fraction: float,
                                  area=(1000.0, 1000.0), seed: int = 0,
                                  macro_power_dbm: float = MACRO_POWER_DBM,
                                  small_power_dbm: float = SMALL_POWER_DBM) -> Deployment:
    if macro_count < 0 or small_count < 0:
        raise ValueError("site counts must be non-negative")
    if not 0 <= chain_fraction <= 1:
        raise ValueError("chain_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    w, h = area
    macro_xy = rng.uniform((0, 0), (w, h), size=(macro_count, 2))
    small_xy = rng.uniform((0, 0), (w, h), size=(small_count, 2))
    n_chain = int(math.floor(chain_fraction * small_count + 0.5))
    chain = set(rng.choice(small_count, size=n_chain, replace=False).tolist()) if small_count else set()
    sites = [Site(f"macro-{i:02d}", float(x), float(y), MACRO, macro_power_dbm, "macro")
             for i, (x, y) in enumerate(macro_xy)]
    sites += [Site(f"small-{i:03d}", float(x), float(y), SMALL, small_power_dbm,
                   "chain" if i in chain else "independent")
              for i, (x, y) in enumerate(small_xy)]
    return Deployment(tuple(sites), (float(w), float(h)))


# -- shadowing ---------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _site_key(seed: int, site_id: str) -> np.uint64:
    digest = hashlib.sha256(f"{seed}|{site_id}".encode()).digest()
    return np.uint64(int.from_bytes(digest[:8], "little"))


def point_keys(xs_m, ys_m) -> np.ndarray:
    """Resolution-independent point keys from coordinates rounded to millimetres."""
    xk = np.rint(np.asarray(xs_m, dtype=float) * 1000).astype(np.int64).astype(np.uint64)
    yk = np.rint(np.asarray(ys_m, dtype=float) * 1000).astype(np.int64).astype(np.uint64)
    return (xk << np.uint64(32)) ^ yk


def standard_normal_draws(seed: int, site_id: str, keys: np.ndarray) -> np.ndarray:
    """N(0, 1) draws that depend only on (seed, site id, point key).

    Counter-based: two splitmix64 hashes give two uniforms, Box-Muller turns
    them into one normal.  No generator state is shared between points, so
    any evaluation order or grid subset sees the same value at a point.
    """
    h1 = _splitmix64(_splitmix64(keys) ^ _site_key(seed, site_id))
    h2 = _splitmix64(h1)
    scale = 2.0 ** -53
    u1 = ((h1 >> np.uint64(11)).astype(np.float64) + 0.5) * scale
    u2 = ((h2 >> np.uint64(11)).astype(np.float64) + 0.5) * scale
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def site_rss(site: Site, model: ChannelModel, xs, ys, seed: int) -> np.ndarray:
    """RSS in dBm from one site at the given points, shadowing included."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    d = np.hypot(xs - site.x_m, ys - site.y_m)
    rss = site.tx_power_dbm - pathloss_db(model, site.tier, d)
    sigma = model.tier(site.tier).sigma_db
    if sigma:
        rss = rss + sigma * standard_normal_draws(seed, site.id, point_keys(xs, ys))
    return rss


# -- grids ---------------------------------------------------------------------------

@dataclass
class RSSGrid:
    resolution_m: float
    area: tuple
    seed: int
    values: np.ndarray        # (ny, nx) dBm, strongest signal per point
    serving: np.ndarray       # (ny, nx) index into site_ids, -1 where no site
    site_ids: tuple = field(default=())

    @property
    def shape(self):
        return self.values.shape

    @property
    def xs(self) -> np.ndarray:
        return np.arange(self.values.shape[1]) * self.resolution_m

    @property
    def ys(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.resolution_m

    @property
    def serving_site(self) -> np.ndarray:
        lookup = np.array(list(self.site_ids) + [None], dtype=object)
        return lookup[self.serving]

    def geometry(self) -> tuple:
        return (self.values.shape, float(self.resolution_m), tuple(map(float, self.area)))

    def _index(self, x_m, y_m):
        i = int(round(x_m / self.resolution_m))
        j = int(round(y_m / self.resolution_m))
        ny, nx = self.values.shape
        return min(max(j, 0), ny - 1), min(max(i, 0), nx - 1)

    def value_at(self, x_m, y_m) -> float:
        return float(self.values[self._index(x_m, y_m)])

    def serving_at(self, x_m, y_m) -> Optional[str]:
        k = int(self.serving[self._index(x_m, y_m)])
        return self.site_ids[k] if k >= 0 else None


def grid_shape(area, resolution_m: float) -> tuple[int, int]:
    w, h = area
    nx, ny = w / resolution_m, h / resolution_m
    if resolution_m <= 0 or abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
        raise ValueError(f"resolution {resolution_m} m does not divide area {w} x {h} m")
    return int(round(ny)), int(round(nx))


def rss_map(d: Deployment, model: ChannelModel = ChannelModel(), resolution_m: float = 5.0,
            seed: Optional[int] = None) -> RSSGrid:
    """Strongest-signal map of a deployment; ``seed`` defaults to the model's."""
    seed = model.seed if seed is None else seed
    ny, nx = grid_shape(d.area, resolution_m)
    xs = np.arange(nx) * resolution_m
    ys = np.arange(ny) * resolution_m
    gx, gy = np.meshgrid(xs, ys)
    best = np.full((ny, nx), SENTINEL)
    serving = np.full((ny, nx), -1, dtype=np.int32)
    for k, site in enumerate(d.sites):
        rss = site_rss(site, model, gx, gy, seed)
        better = rss > best
        best[better] = rss[better]
        serving[better] = k
    return RSSGrid(float(resolution_m), tuple(map(float, d.area)), seed, best, serving,
                   tuple(s.id for s in d.sites))


@dataclass
class RestrictedCdf:
    threshold_dbm: float
    rss_dbm: np.ndarray          # sorted distinct values below threshold
    cum_fraction: np.ndarray     # empirical CDF at those values
    fraction_below: float        # share of all grid points below threshold
    count: int

    def rows(self):
        return list(zip(self.rss_dbm.tolist(), self.cum_fraction.tolist()))


def restricted_cdf(g: RSSGrid, threshold_dbm: float = CLOSEST_POINT_RSS_DBM) -> RestrictedCdf:
    """Empirical CDF over the grid points with RSS strictly below the threshold."""
    v = g.values.ravel()
    below = np.sort(v[v < threshold_dbm])
    n = below.size
    if n == 0:
        empty = np.empty(0)
        return RestrictedCdf(threshold_dbm, empty, empty, 0.0, 0)
    distinct, first = np.unique(below, return_index=True)
    last = np.append(first[1:], n)      # points <= each distinct value
    return RestrictedCdf(threshold_dbm, distinct, last / n, n / v.size, n)


@dataclass
class ScenarioComparison:
    mean_gain_db: float
    improved_point_count: int
    point_count: int
    delta_min_db: float
    delta_median_db: float
    delta_p90_db: float
    delta_max_db: float
    mean_relative_gain_pct: float
    fraction_below_baseline: Optional[float] = None
    fraction_below_augmented: Optional[float] = None

    @property
    def improved_fraction(self) -> float:
        return self.improved_point_count / self.point_count if self.point_count else 0.0

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["improved_fraction"] = self.improved_fraction
        return d


def compare_scenarios(baseline: RSSGrid, augmented: RSSGrid,
                      threshold_dbm: Optional[float] = None) -> ScenarioComparison:
    """Pointwise RSS gain of ``augmented`` over ``baseline``.

    Points where both grids hold the empty-deployment sentinel count as zero
    gain.  ``mean_relative_gain_pct`` is the mean gain over the mean
    magnitude of the baseline RSS.
    """
    if baseline.geometry() != augmented.geometry():
        raise GeometryMismatch(f"grid geometry {baseline.geometry()} != {augmented.geometry()}")
    if baseline.seed != augmented.seed:
        raise GeometryMismatch(f"shadowing seeds differ: {baseline.seed} != {augmented.seed}")
    b, a = baseline.values.ravel(), augmented.values.ravel()
    both_empty = np.isneginf(a) & np.isneginf(b)
    with np.errstate(invalid="ignore"):
        delta = np.where(both_empty, 0.0, a - b)
    finite_b = b[np.isfinite(b)]
    mean_gain = float(delta.mean()) if delta.size else 0.0
    scale = float(np.abs(finite_b).mean()) if finite_b.size else float("nan")
    out = ScenarioComparison(
        mean_gain_db=mean_gain,
        improved_point_count=int(np.count_nonzero(delta > 0)),
        point_count=int(delta.size),
        delta_min_db=float(delta.min()),
        delta_median_db=float(np.median(delta)),
        delta_p90_db=float(np.percentile(delta, 90)),
        delta_max_db=float(delta.max()),
        mean_relative_gain_pct=100.0 * mean_gain / scale if scale else float("nan"),
    )
    if threshold_dbm is not None:
        out.fraction_below_baseline = restricted_cdf(baseline, threshold_dbm).fraction_below
        out.fraction_below_augmented = restricted_cdf(augmented, threshold_dbm).fraction_below
    return out


# -- files -------------------------------------------------------------------------

def _parse_sites(path, area):
    """Returns (sites, area, errors, warnings); never raises on content."""
    path = Path(path)
    lines = path.read_text().splitlines()
    errors, notes = [], []
    rows = []
    for lineno, text in enumerate(lines, start=1):
        stripped = text.strip()
        if stripped.startswith("#"):
            key, _, val = stripped.lstrip("#").strip().partition("=")
            if key.strip() == "area_m":
                try:
                    w, h = (float(p) for p in val.split(","))
                    area = (w, h)
                except ValueError:
                    errors.append(SiteFileError(f"bad area comment {val!r}", lineno))
            continue
        if stripped:
            rows.append((lineno, text))
    if not rows:
        errors.append(SiteFileError("missing header " + ",".join(SITE_COLUMNS), 1))
        return [], area, errors, notes
    header_line, header_text = rows[0]
    header = [c.strip() for c in next(csv.reader([header_text]))]
    if tuple(header) != SITE_COLUMNS:
        missing = [c for c in SITE_COLUMNS if c not in header]
        extra = [c for c in header if c not in SITE_COLUMNS]
        detail = "; ".join(filter(None, [
            f"missing {', '.join(missing)}" if missing else "",
            f"unexpected {', '.join(extra)}" if extra else "",
            "columns out of order" if not missing and not extra else ""]))
        errors.append(SiteFileError(f"header must be {','.join(SITE_COLUMNS)} ({detail})",
                                    header_line))
        return [], area, errors, notes

    sites, seen = [], {}
    for lineno, text in rows[1:]:
        cells = [c.strip() for c in next(csv.reader([text]))]
        if len(cells) != len(SITE_COLUMNS):
            errors.append(SiteFileError(
                f"expected {len(SITE_COLUMNS)} fields, found {len(cells)}", lineno))
            continue
        rec = dict(zip(SITE_COLUMNS, cells))
        row_ok = True
        if not rec["site_id"]:
            errors.append(SiteFileError("empty site id", lineno, "site_id"))
            row_ok = False
        elif rec["site_id"] in seen:
            errors.append(SiteFileError(
                f"duplicate site_id {rec['site_id']!r} (first on line {seen[rec['site_id']]})",
                lineno, "site_id"))
            row_ok = False
        else:
            seen[rec["site_id"]] = lineno
        nums = {}
        for col in ("x_m", "y_m", "power_dbm"):
            try:
                nums[col] = float(rec[col])
                if not math.isfinite(nums[col]):
                    raise ValueError
            except ValueError:
                errors.append(SiteFileError(f"not a finite number: {rec[col]!r}", lineno, col))
                row_ok = False
        tier = TIERS.get(rec["tier"].lower())
        if tier is None:
            errors.append(SiteFileError(
                f"unknown tier {rec['tier']!r} (expected macro or small)", lineno, "tier"))
            row_ok = False
        if not row_ok:
            continue
        site = Site(rec["site_id"], nums["x_m"], nums["y_m"], tier, nums["power_dbm"], rec["tag"])
        w, h = area
        if not (0 <= site.x_m <= w and 0 <= site.y_m <= h):
            notes.append(f"line {lineno}: site {site.id!r} at ({site.x_m}, {site.y_m}) "
                         f"lies outside the {w} x {h} m area")
        sites.append(site)
    return sites, area, errors, notes


def ingest_sites(path, area=(1000.0, 1000.0)) -> Deployment:
    """Load a site CSV.  Out-of-area sites are kept and reported as warnings.

    A ``# area_m=W,H`` comment line in the file overrides ``area``.
    """
    sites, area, errors, notes = _parse_sites(path, area)
    if errors:
        raise errors[0]
    for note in notes:
        warnings.warn(note, SiteOutOfBounds, stacklevel=2)
    return Deployment(tuple(sites), tuple(area))


def validate_sites(path, area=(1000.0, 1000.0)) -> tuple[list[str], list[str]]:
    """All (errors, warnings) for a site CSV, as messages."""
    _, _, errors, notes = _parse_sites(path, area)
    return [str(e) for e in errors], notes


def fmt(x: float) -> str:
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return f"{x:.6f}"


def write_sites_csv(d: Deployment, fh) -> None:
    fh.write(f"# area_m={fmt(d.area[0])},{fmt(d.area[1])}\n")
    fh.write(",".join(SITE_COLUMNS) + "\n")
    for s in d.sites:
        fh.write(f"{s.id},{fmt(s.x_m)},{fmt(s.y_m)},{s.tier.lower()},{fmt(s.tx_power_dbm)},{s.tag}\n")


def grid_rows(g: RSSGrid):
    """(x, y, rss_dbm, serving_site) for every point, row-major from the anchor."""
    xs, ys = g.xs, g.ys
    ids = list(g.site_ids) + [""]
    for j, y in enumerate(ys):
        row_v = g.values[j]
        row_s = g.serving[j]
        for i, x in enumerate(xs):
            yield float(x), float(y), float(row_v[i]), ids[row_s[i]]


def write_grid_csv(g: RSSGrid, fh) -> None:
    fh.write("x,y,rss_dbm,serving_site\n")
    fh.writelines(f"{fmt(x)},{fmt(y)},{fmt(v)},{s}\n" for x, y, v, s in grid_rows(g))


def write_cdf_csv(cdf: RestrictedCdf, fh) -> None:
    fh.write("rss_dbm,cum_fraction\n")
    fh.writelines(f"{fmt(v)},{fmt(c)}\n" for v, c in cdf.rows())

