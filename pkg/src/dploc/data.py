"""Fingerprint radiomaps: dataset model, CSV I/O, testbed simulator, scaling, folds."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dploc.errors import ConfigError, DataError, SchemaError

RSS_FLOOR = -100.0  # not-detected sentinel, dBm
RSS_CEIL = 0.0


@dataclass(frozen=True)
class Zone:
    index: int  # 0-based
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass
class TestbedSpec:
    width: float = 51.0
    height: float = 18.0
    ap_positions: list[tuple[float, float]] = field(
        default_factory=lambda: [(x, y) for y in (3.0, 9.0, 15.0) for x in (8.5, 25.5, 42.5)]
    )
    rp_spacing_x: float = 1.59375  # 51 / 32
    rp_spacing_y: float = 1.5  # 18 / 12 -> 32 x 12 = 384 RPs
    zones: list[Zone] = field(default_factory=lambda: default_zones())
    pathloss_exponent: float = 2.5
    p0_dbm: float = -30.0
    d0: float = 1.0
    shadowing_std_db: float = 4.0
    samples_per_point: int = 400
    n_queries: int = 0
    seed: int = 0

    __test__ = False  # not a pytest class

    KEYS = (
        "width", "height", "ap_positions", "rp_spacing_x", "rp_spacing_y", "zones",
        "pathloss_exponent", "p0_dbm", "d0", "shadowing_std_db", "samples_per_point",
        "n_queries", "seed",
    )

    def __post_init__(self) -> None:
        self.ap_positions = [tuple(map(float, p)) for p in self.ap_positions]
        self.zones = [z if isinstance(z, Zone) else Zone(**z) for z in self.zones]
        self.validate()

    @property
    def n_aps(self) -> int:
        return len(self.ap_positions)

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("testbed width and height must be positive")
        if not self.ap_positions:
            raise ConfigError("testbed needs at least one AP")
        for x, y in self.ap_positions:
            if not (0 <= x <= self.width and 0 <= y <= self.height):
                raise ConfigError(f"AP at ({x}, {y}) lies outside the testbed")
        if self.rp_spacing_x <= 0 or self.rp_spacing_y <= 0:
            raise ConfigError("RP spacing must be positive")
        if self.d0 <= 0 or self.samples_per_point < 1 or self.shadowing_std_db < 0 or self.n_queries < 0:
            raise ConfigError("invalid propagation parameters")
        if sorted(z.index for z in self.zones) != list(range(len(self.zones))):
            raise ConfigError("zone indices must be exactly 0..n_zones-1")
        area = sum((z.x1 - z.x0) * (z.y1 - z.y0) for z in self.zones)
        for i, a in enumerate(self.zones):
            if a.x0 < 0 or a.y0 < 0 or a.x1 > self.width or a.y1 > self.height or a.x1 <= a.x0 or a.y1 <= a.y0:
                raise ConfigError(f"zone {a.index} is not a valid rectangle inside the testbed")
            for b in self.zones[i + 1:]:
                if a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1:
                    raise ConfigError(f"zones {a.index} and {b.index} overlap")
        if not math.isclose(area, self.width * self.height, rel_tol=1e-9):
            raise ConfigError("zones do not tile the testbed")

    def zone_of(self, x: float, y: float) -> int:
        for z in self.zones:
            in_x = z.x0 <= x < z.x1 or (x == z.x1 == self.width)
            in_y = z.y0 <= y < z.y1 or (y == z.y1 == self.height)
            if in_x and in_y:
                return z.index
        raise ConfigError(f"point ({x}, {y}) is not covered by any zone")

    def rp_grid(self) -> np.ndarray:
        nx = int(math.floor(self.width / self.rp_spacing_x + 1e-9))
        ny = int(math.floor(self.height / self.rp_spacing_y + 1e-9))
        xs = (np.arange(nx) + 0.5) * self.rp_spacing_x
        ys = (np.arange(ny) + 0.5) * self.rp_spacing_y
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.KEYS}
        d["ap_positions"] = [list(p) for p in self.ap_positions]
        d["zones"] = [asdict(z) for z in self.zones]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestbedSpec":
        unknown = set(d) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown testbed keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TestbedSpec":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ConfigError(f"cannot parse testbed spec {path}: {exc}") from exc

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def default_zones(width: float = 51.0, height: float = 18.0) -> list[Zone]:
    """12 rooms (6 per side) around a central corridor split into 3 segments."""
    c0, c1 = 7.5, 10.5
    room_w = width / 6
    zones = []
    for i in range(6):
        zones.append(Zone(i, i * room_w, 0.0, (i + 1) * room_w, c0))
    for i in range(6):
        zones.append(Zone(6 + i, i * room_w, c1, (i + 1) * room_w, height))
    seg = width / 3
    for i in range(3):
        zones.append(Zone(12 + i, i * seg, c0, (i + 1) * seg, c1))
    return zones


@dataclass(frozen=True)
class Schema:
    """What a radiomap file is expected to contain and the bounds it must respect."""

    n_aps: int = 9
    n_zones: int = 15
    width: float = 51.0
    height: float = 18.0

    @classmethod
    def for_testbed(cls, spec: TestbedSpec) -> "Schema":
        return cls(spec.n_aps, spec.n_zones, spec.width, spec.height)


@dataclass
class FingerprintDataset:
    rss: np.ndarray  # (N, n_aps) dBm
    coords: np.ndarray | None = None  # (N, 2) meters
    zones: np.ndarray | None = None  # (N,) 0-based
    schema: Schema = field(default_factory=Schema)

    def __post_init__(self) -> None:
        self.rss = np.asarray(self.rss, dtype=np.float64)
        if self.rss.ndim != 2:
            raise SchemaError("rss must be a 2-D matrix")
        if self.coords is None and self.zones is None:
            raise SchemaError("a dataset needs coordinates, zones, or both")
        n = self.rss.shape[0]
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.float64).reshape(n, 2)
        if self.zones is not None:
            self.zones = np.asarray(self.zones, dtype=np.int64).reshape(n)
        if self.rss.shape[1] != self.schema.n_aps:
            raise SchemaError(f"rss has {self.rss.shape[1]} columns, schema declares {self.schema.n_aps} APs")

    def __len__(self) -> int:
        return self.rss.shape[0]

    @property
    def ap_count(self) -> int:
        return self.rss.shape[1]

    @property
    def columns(self) -> list[str]:
        cols = [f"AP_{i + 1}" for i in range(self.ap_count)]
        if self.coords is not None:
            cols += ["x", "y"]
        if self.zones is not None:
            cols.append("zone")
        return cols

    def subset(self, idx: np.ndarray) -> "FingerprintDataset":
        return FingerprintDataset(
            self.rss[idx],
            None if self.coords is None else self.coords[idx],
            None if self.zones is None else self.zones[idx],
            self.schema,
        )

    def select(self, mode: str) -> "FingerprintDataset":
        """Project to the columns a mode uses: RSS+xy or RSS+zone."""
        if mode == "location_based":
            if self.coords is None:
                raise SchemaError("location-based mode needs x,y columns")
            return FingerprintDataset(self.rss, self.coords, None, self.schema)
        if mode == "zone_based":
            if self.zones is None:
                raise SchemaError("zone-based mode needs a zone column")
            return FingerprintDataset(self.rss, None, self.zones, self.schema)
        raise ConfigError(f"unknown mode {mode!r}")

    def table(self) -> np.ndarray:
        """All columns as one float matrix, in ``columns`` order (zones 0-based)."""
        parts = [self.rss]
        if self.coords is not None:
            parts.append(self.coords)
        if self.zones is not None:
            parts.append(self.zones[:, None].astype(np.float64))
        return np.hstack(parts)

    def validate(self) -> None:
        problems = _row_problems(self.rss, self.coords, self.zones, self.schema)
        if problems:
            raise DataError("dataset violates schema", problems)


def _row_problems(rss, coords, zones, schema: Schema, first_row: int = 1) -> list[tuple[int, str]]:
    problems = []
    for i in range(rss.shape[0]):
        r = first_row + i
        if np.any(rss[i] < RSS_FLOOR) or np.any(rss[i] > RSS_CEIL):
            problems.append((r, f"RSS outside [{RSS_FLOOR:g}, {RSS_CEIL:g}] dBm"))
        if coords is not None:
            x, y = coords[i]
            if not (0 <= x <= schema.width and 0 <= y <= schema.height):
                problems.append((r, f"coordinates ({x}, {y}) outside testbed"))
        if zones is not None and not 0 <= zones[i] < schema.n_zones:
            problems.append((r, f"zone {zones[i] + 1} outside 1..{schema.n_zones}"))
    return problems


# --- CSV ---------------------------------------------------------------------


def fmt_float(v: float) -> str:
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def write_csv(dataset: FingerprintDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.columns)
        for i in range(len(dataset)):
            row = [fmt_float(v) for v in dataset.rss[i]]
            if dataset.coords is not None:
                row += [fmt_float(v) for v in dataset.coords[i]]
            if dataset.zones is not None:
                row.append(str(int(dataset.zones[i]) + 1))
            w.writerow(row)


def load_csv(path: str | Path, schema: Schema = Schema()) -> FingerprintDataset:
    """Read a radiomap CSV (``AP_1..AP_n`` plus any of ``x,y`` / ``zone``)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    ap_cols = [f"AP_{i + 1}" for i in range(schema.n_aps)]
    missing = [c for c in ap_cols if c not in header]
    if missing:
        raise DataError(f"{path} is missing columns {missing}")
    has_xy = "x" in header and "y" in header
    if ("x" in header) != ("y" in header):
        raise DataError(f"{path} must carry both x and y or neither")
    has_zone = "zone" in header
    if not (has_xy or has_zone):
        raise DataError(f"{path} has neither x,y nor zone columns")
    expected = ap_cols + (["x", "y"] if has_xy else []) + (["zone"] if has_zone else [])
    if header != expected:
        raise DataError(f"{path} header {header} does not match {expected}")
    body = rows[1:]
    if not body:
        raise DataError(f"{path} contains no records")

    values = np.empty((len(body), len(header)))
    bad: list[tuple[int, str]] = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            bad.append((i + 1, f"expected {len(header)} cells, got {len(row)}"))
            continue
        try:
            values[i] = [float(c) for c in row]
        except ValueError:
            bad.append((i + 1, "non-numeric cell"))
            continue
        if not np.all(np.isfinite(values[i])):
            bad.append((i + 1, "non-finite cell"))
    if bad:
        raise DataError(f"{path} has malformed rows", bad)

    n = schema.n_aps
    rss = values[:, :n]
    coords = values[:, n:n + 2] if has_xy else None
    zones = None
    if has_zone:
        zcol = values[:, -1]
        if np.any(zcol != np.round(zcol)):
            raise DataError(f"{path} has non-integer zones", [(int(i) + 1, "non-integer zone") for i in np.flatnonzero(zcol != np.round(zcol))])
        zones = zcol.astype(np.int64) - 1
    problems = _row_problems(rss, coords, zones, schema)
    if problems:
        raise DataError(f"{path} has rows violating the schema", problems)
    return FingerprintDataset(rss, coords, zones, schema)


# --- simulator -----------------------------------------------------------------


def path_loss_rss(spec: TestbedSpec, points: np.ndarray) -> np.ndarray:
    """Noise-free log-distance RSS (dBm) of every AP at every point, clamped."""
    ap = np.asarray(spec.ap_positions)
    d = np.linalg.norm(points[:, None, :] - ap[None, :, :], axis=2)
    rss = spec.p0_dbm - 10.0 * spec.pathloss_exponent * np.log10(np.maximum(d, spec.d0) / spec.d0)
    return np.clip(rss, RSS_FLOOR, RSS_CEIL)


def _measure(spec: TestbedSpec, points: np.ndarray, rng: np.random.Generator, samples: int) -> np.ndarray:
    ap = np.asarray(spec.ap_positions)
    d = np.linalg.norm(points[:, None, :] - ap[None, :, :], axis=2)
    mean = spec.p0_dbm - 10.0 * spec.pathloss_exponent * np.log10(np.maximum(d, spec.d0) / spec.d0)
    if spec.shadowing_std_db > 0:
        noise = rng.normal(0.0, spec.shadowing_std_db, size=(samples,) + mean.shape).mean(axis=0)
    else:
        noise = 0.0
    rss = np.clip(mean + noise, RSS_FLOOR, RSS_CEIL)
    return np.round(rss, 6)


def synthesize_testbed(spec: TestbedSpec) -> FingerprintDataset:
    """Simulated radiomap on the RP grid (coords and zones both present)."""
    pts = spec.rp_grid()
    if len(pts) == 0:
        raise ConfigError("RP grid spacing yields zero reference points")
    rng = np.random.default_rng(spec.seed)
    rss = _measure(spec, pts, rng, spec.samples_per_point)
    zones = np.array([spec.zone_of(x, y) for x, y in pts])
    return FingerprintDataset(rss, np.round(pts, 6), zones, Schema.for_testbed(spec))


def synthesize_queries(spec: TestbedSpec, n: int | None = None, samples: int = 100) -> FingerprintDataset:
    """Separate query set at uniform random positions (independent RNG stream)."""
    n = spec.n_queries if n is None else n
    if n < 1:
        raise ConfigError("query set size must be at least 1")
    rng = np.random.default_rng([spec.seed, 1])
    pts = np.column_stack([rng.uniform(0, spec.width, n), rng.uniform(0, spec.height, n)])
    pts = np.round(pts, 6)
    rss = _measure(spec, pts, rng, samples)
    zones = np.array([spec.zone_of(x, y) for x, y in pts])
    return FingerprintDataset(rss, pts, zones, Schema.for_testbed(spec))


# --- scaling and folds -----------------------------------------------------------


@dataclass
class FeatureScaler:
    """Per-feature affine map onto [-1, 1]; constant features map to 0."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, table: np.ndarray) -> "FeatureScaler":
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2 or table.shape[0] == 0:
            raise DataError("cannot fit a scaler on an empty table")
        return cls(table.min(axis=0), table.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.maxs - self.mins

    def transform(self, table: np.ndarray) -> np.ndarray:
        table = np.asarray(table, dtype=np.float64)
        span = self.span
        ok = span > 0
        out = np.zeros_like(table)
        out[:, ok] = 2.0 * (table[:, ok] - self.mins[ok]) / span[ok] - 1.0
        return out

    def inverse_transform(self, table: np.ndarray) -> np.ndarray:
        table = np.asarray(table, dtype=np.float64)
        span = self.span
        ok = span > 0
        out = np.broadcast_to(self.mins, table.shape).copy()
        out[:, ok] = (table[:, ok] + 1.0) * 0.5 * span[ok] + self.mins[ok]
        return out

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(np.asarray(d["mins"], dtype=np.float64), np.asarray(d["maxs"], dtype=np.float64))


def fit_scaler(dataset: FingerprintDataset, features: Sequence[str] | None = None) -> FeatureScaler:
    """Fit on the named columns (default: every column except ``zone``)."""
    cols = dataset.columns
    features = [c for c in cols if c != "zone"] if features is None else list(features)
    missing = [f for f in features if f not in cols]
    if missing:
        raise SchemaError(f"unknown features {missing}")
    idx = [cols.index(f) for f in features]
    return FeatureScaler.fit(dataset.table()[:, idx])


def kfold_split(data: FingerprintDataset | int, k: int, seed: int) -> list[np.ndarray]:
    """``k`` disjoint shuffled index folds whose sizes differ by at most one."""
    n_records = data if isinstance(data, (int, np.integer)) else len(data)
    if k < 2:
        raise ConfigError("k must be at least 2")
    if k > n_records:
        raise ConfigError(f"cannot split {n_records} records into {k} folds")
    perm = np.random.default_rng(seed).permutation(n_records)
    return [np.sort(f) for f in np.array_split(perm, k)]
