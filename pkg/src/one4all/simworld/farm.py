"""Virtual farm loaded from a GeoJSON FeatureCollection."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from shapely.geometry import Point, Polygon

from one4all.simworld.geo import haversine, valid_lat_lon

TYPED_PROPS = {"species": str, "temperature": float, "co2_flux": float, "canopy_radius": float}


class GeoJsonError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    id: str
    geometry: str  # "Point" or "Polygon"
    coordinates: tuple  # (lat, lon) for points; ring of (lat, lon) for polygons
    props: dict[str, Any] = field(default_factory=dict)

    @property
    def anchor(self) -> tuple[float, float]:
        """Representative (lat, lon): the point itself or the polygon centroid."""
        if self.geometry == "Point":
            return self.coordinates
        c = Polygon([(lon, lat) for lat, lon in self.coordinates]).centroid
        return (c.y, c.x)


@dataclass(frozen=True)
class FarmModel:
    features: tuple[Feature, ...] = ()
    bounds: tuple[tuple[float, float], ...] | None = None  # ring of (lat, lon)
    name: str = ""
    props: dict[str, Any] = field(default_factory=dict)

    def _polygon(self) -> Polygon | None:
        if self.bounds is None:
            return None
        return Polygon([(lon, lat) for lat, lon in self.bounds])

    def contains(self, lat: float, lon: float) -> bool:
        if not valid_lat_lon(lat, lon):
            return False
        poly = self._polygon()
        return True if poly is None else poly.covers(Point(lon, lat))

    def feature(self, feature_id: str) -> Feature | None:
        for f in self.features:
            if f.id == feature_id:
                return f
        return None

    def nearest(self, lat: float, lon: float, max_distance: float, prop: str | None = None) -> tuple[Feature, float] | None:
        """Nearest feature within *max_distance* meters (ties broken by id)."""
        best = None
        for f in self.features:
            if prop is not None and prop not in f.props:
                continue
            d = haversine(lat, lon, *f.anchor)
            if d <= max_distance and (best is None or (d, f.id) < (best[1], best[0].id)):
                best = (f, d)
        return best

    def center(self) -> tuple[float, float]:
        poly = self._polygon()
        if poly is not None:
            c = poly.centroid
            return (c.y, c.x)
        if not self.features:
            return (0.0, 0.0)
        pts = [f.anchor for f in self.features]
        return (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts))

    def summary(self) -> str:
        """Plain-text description used as planner context."""
        lines = [f"FARM {self.name or 'unnamed'}: {len(self.features)} features"]
        if self.bounds is not None:
            ring = "; ".join(f"{lat:.7f},{lon:.7f}" for lat, lon in self.bounds)
            lines.append(f"  boundary (lat,lon): {ring}")
        species = Counter(str(f.props.get("species", "unknown")) for f in self.features)
        if species:
            lines.append("  species: " + ", ".join(f"{k} x{v}" for k, v in sorted(species.items())))
        for f in sorted(self.features, key=lambda f: f.id):
            lat, lon = f.anchor
            props = ", ".join(f"{k}={f.props[k]}" for k in sorted(f.props))
            lines.append(f"  {f.id} at {lat:.7f},{lon:.7f}" + (f" ({props})" if props else ""))
        return "\n".join(lines)


def _lat_lon(pos: Any, where: str) -> tuple[float, float]:
    if not isinstance(pos, (list, tuple)) or len(pos) < 2:
        raise GeoJsonError(f"{where}: a position needs [lon, lat]")
    lon, lat = pos[0], pos[1]
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in (lon, lat)):
        raise GeoJsonError(f"{where}: coordinates must be finite numbers")
    if not valid_lat_lon(lat, lon):
        raise GeoJsonError(f"{where}: ({lat}, {lon}) is outside WGS84 range")
    return (float(lat), float(lon))


def _ring(coords: Any, where: str) -> tuple[tuple[float, float], ...]:
    if not isinstance(coords, list) or not coords or not isinstance(coords[0], list):
        raise GeoJsonError(f"{where}: polygon needs a list of rings")
    ring = tuple(_lat_lon(p, where) for p in coords[0])
    if len(ring) < 4:
        raise GeoJsonError(f"{where}: polygon ring needs at least 4 positions")
    return ring


def _typed_props(raw: dict, where: str) -> dict[str, Any]:
    props = dict(raw)
    for key, typ in TYPED_PROPS.items():
        if key not in props:
            continue
        value = props[key]
        if typ is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise GeoJsonError(f"{where}: property {key} must be a number")
            props[key] = float(value)
        elif not isinstance(value, str):
            raise GeoJsonError(f"{where}: property {key} must be a string")
    return props


def load_farm(geojson: str | bytes) -> FarmModel:
    """Load a FeatureCollection. A Polygon feature with ``kind: boundary`` sets the bounds."""
    try:
        doc = json.loads(geojson)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GeoJsonError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeoJsonError("expected a GeoJSON FeatureCollection")
    raw_features = doc.get("features")
    if not isinstance(raw_features, list):
        raise GeoJsonError("FeatureCollection.features must be a list")

    features: list[Feature] = []
    bounds = None
    for i, raw in enumerate(raw_features):
        where = f"feature {i}"
        if not isinstance(raw, dict) or raw.get("type") != "Feature":
            raise GeoJsonError(f"{where}: not a Feature")
        props = raw.get("properties") or {}
        if not isinstance(props, dict):
            raise GeoJsonError(f"{where}: properties must be an object")
        fid = str(raw.get("id", props.get("id", f"feature_{i}")))
        geom = raw.get("geometry")
        if not isinstance(geom, dict):
            raise GeoJsonError(f"{where}: missing geometry")
        gtype = geom.get("type")
        if gtype == "Point":
            coords: Any = _lat_lon(geom.get("coordinates"), where)
        elif gtype == "Polygon":
            coords = _ring(geom.get("coordinates"), where)
        else:
            raise GeoJsonError(f"{where}: unsupported geometry type {gtype!r}")
        if props.get("kind") == "boundary":
            if gtype != "Polygon":
                raise GeoJsonError(f"{where}: boundary must be a Polygon")
            if bounds is not None:
                raise GeoJsonError("more than one boundary feature")
            bounds = coords
            continue
        features.append(Feature(fid, gtype, coords, _typed_props(props, where)))

    ids = [f.id for f in features]
    dupes = sorted({x for x in ids if ids.count(x) > 1})
    if dupes:
        raise GeoJsonError(f"duplicate feature ids: {', '.join(dupes)}")
    farm = FarmModel(tuple(features), bounds, str(doc.get("name", "")), dict(doc.get("properties") or {}))
    for f in features:
        pts = [f.coordinates] if f.geometry == "Point" else list(f.coordinates)
        if not all(farm.contains(lat, lon) for lat, lon in pts):
            raise GeoJsonError(f"feature {f.id} lies outside the farm boundary")
    return farm
