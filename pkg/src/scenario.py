"""
Site geometry, AP placement and ground-truth device paths
"""

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError

Point = tuple[float, float]

# Paper site: 10 APs over an 85 x 55 m office, ranging at 1 Hz.
DEFAULT_WIDTH = 85.0
DEFAULT_HEIGHT = 55.0
DEFAULT_AP_INSET = 5.0
DEFAULT_RANGING_INTERVAL = 1.0


class LinkState(str, Enum):
    LOS = "LOS"
    NLOS = "NLOS"


@dataclass(frozen=True)
class AccessPoint:
    id: int
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ConfigurationError(f"AP {self.id} has a non-finite position")

    @property
    def position(self) -> Point:
        return (self.x, self.y)

    def to_dict(self) -> dict:
        return {"id": self.id, "x": self.x, "y": self.y}


@dataclass(frozen=True)
class SiteConfig:
    """Rectangular site with APs and optional wall polygons.

    Each wall is a vertex list: two vertices form a wall segment, three or
    more a closed polygon. nlos_override_rate flips geometric LOS links to
    NLOS at random during data generation; classify_link itself stays
    deterministic.
    """
    width: float
    height: float
    aps: tuple[AccessPoint, ...]
    walls: tuple[tuple[Point, ...], ...] = ()
    nlos_override_rate: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError(f"Site dimensions must be positive, got {self.width}x{self.height}")
        ids = [ap.id for ap in self.aps]
        if len(ids) != len(set(ids)):
            raise ConfigurationError(f"Duplicate AP ids in site: {sorted(ids)}")
        for ap in self.aps:
            if not (0.0 <= ap.x <= self.width and 0.0 <= ap.y <= self.height):
                raise ConfigurationError(f"AP {ap.id} at {ap.position} lies outside the site")
        for wall in self.walls:
            if len(wall) < 2:
                raise ConfigurationError("Walls need at least two vertices")
        if not 0.0 <= self.nlos_override_rate <= 1.0:
            raise ConfigurationError(f"nlos_override_rate must be a probability, got {self.nlos_override_rate}")

    @property
    def center(self) -> Point:
        return (self.width / 2.0, self.height / 2.0)

    def ap_positions(self) -> dict[int, Point]:
        return {ap.id: ap.position for ap in self.aps}

    def ap(self, ap_id: int) -> AccessPoint:
        for ap in self.aps:
            if ap.id == ap_id:
                return ap
        raise ConfigurationError(f"Unknown AP id {ap_id}")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "aps": [ap.to_dict() for ap in self.aps],
            "walls": [[list(v) for v in wall] for wall in self.walls],
            "nlos_override_rate": self.nlos_override_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "SiteConfig":
        try:
            aps = tuple(AccessPoint(int(a["id"]), float(a["x"]), float(a["y"])) for a in data["aps"])
            walls = tuple(
                tuple((float(v[0]), float(v[1])) for v in wall) for wall in data.get("walls", [])
            )
            return cls(
                width=float(data["width"]),
                height=float(data["height"]),
                aps=aps,
                walls=walls,
                nlos_override_rate=float(data.get("nlos_override_rate", 0.0)),
            )
        except (KeyError, TypeError, IndexError) as e:
            raise ConfigurationError(f"Invalid site configuration: {e!r}") from e


@dataclass(frozen=True)
class TruePath:
    waypoints: tuple[Point, ...]
    speed: float = 1.0
    ranging_interval: float = DEFAULT_RANGING_INTERVAL

    def __post_init__(self):
        if not self.waypoints:
            raise ConfigurationError("Path needs at least one waypoint")
        if self.speed <= 0:
            raise ConfigurationError(f"Path speed must be positive, got {self.speed}")
        if self.ranging_interval <= 0:
            raise ConfigurationError(f"Ranging interval must be positive, got {self.ranging_interval}")
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if a == b:
                raise ConfigurationError(f"Consecutive waypoints must differ, got {a} twice")

    @property
    def length(self) -> float:
        pts = np.asarray(self.waypoints, dtype=float)
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def to_dict(self) -> dict:
        return {
            "waypoints": [list(w) for w in self.waypoints],
            "speed": self.speed,
            "interval": self.ranging_interval,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TruePath":
        try:
            return cls(
                waypoints=tuple((float(w[0]), float(w[1])) for w in data["waypoints"]),
                speed=float(data.get("speed", 1.0)),
                ranging_interval=float(data.get("interval", DEFAULT_RANGING_INTERVAL)),
            )
        except (KeyError, TypeError, IndexError) as e:
            raise ConfigurationError(f"Invalid path configuration: {e!r}") from e


def sample_true_trajectory(path: TruePath) -> np.ndarray:
    """Positions at every ranging instant along the path, shape (K, 2).

    Samples are spaced speed * ranging_interval apart in arc length and the
    last sample is always the final waypoint.
    """
    if not path.waypoints:
        raise ConfigurationError("Path needs at least one waypoint")
    pts = np.asarray(path.waypoints, dtype=float)
    if len(pts) == 1:
        return pts.copy()

    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    spacing = path.speed * path.ranging_interval

    n_full = int(math.floor(total / spacing + 1e-12))
    arcs = [k * spacing for k in range(n_full + 1)]
    if total - arcs[-1] > 1e-9:
        arcs.append(total)

    samples = np.empty((len(arcs), 2))
    for k, s in enumerate(arcs):
        if s >= total:
            samples[k] = pts[-1]
            continue
        i = int(np.searchsorted(cum, s, side="right")) - 1
        t = (s - cum[i]) / seg_len[i]
        samples[k] = pts[i] + (pts[i + 1] - pts[i]) * t
    return samples


def _orientation(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a: Point, b: Point, c: Point) -> bool:
    """c is collinear with a-b; check it lies within the bounding box."""
    return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])


def _segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    d1 = _orientation(q1, q2, p1)
    d2 = _orientation(q1, q2, p2)
    d3 = _orientation(p1, p2, q1)
    d4 = _orientation(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and ((d3 > 0) != (d4 > 0)) and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False


def _point_in_polygon(p: Point, polygon: tuple[Point, ...]) -> bool:
    """Ray casting."""
    inside = False
    n = len(polygon)
    j = n - 1
    for i in range(n):
        xi, yi = polygon[i]
        xj, yj = polygon[j]
        if ((yi > p[1]) != (yj > p[1])) and (p[0] < (xj - xi) * (p[1] - yi) / (yj - yi) + xi):
            inside = not inside
        j = i
    return inside


def _wall_edges(wall: tuple[Point, ...]) -> list[tuple[Point, Point]]:
    if len(wall) == 2:
        return [(wall[0], wall[1])]
    return [(wall[i], wall[(i + 1) % len(wall)]) for i in range(len(wall))]


def classify_link(site: SiteConfig, device_pos: Point, ap: AccessPoint) -> LinkState:
    """LOS iff the device-AP segment touches no wall."""
    a = (float(device_pos[0]), float(device_pos[1]))
    b = ap.position
    if a == b:
        return LinkState.LOS

    for wall in site.walls:
        for q1, q2 in _wall_edges(wall):
            if _segments_intersect(a, b, q1, q2):
                return LinkState.NLOS
        if len(wall) >= 3 and (_point_in_polygon(a, wall) or _point_in_polygon(b, wall)):
            return LinkState.NLOS
    return LinkState.LOS


def default_aps(width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT, inset: float = DEFAULT_AP_INSET) -> tuple[AccessPoint, ...]:
    """Two rows of five APs, inset from the site boundary."""
    xs = np.linspace(inset, width - inset, 5)
    ys = (inset, height - inset)
    aps = []
    for row, y in enumerate(ys):
        for col, x in enumerate(xs):
            aps.append(AccessPoint(id=row * 5 + col + 1, x=float(x), y=float(y)))
    return tuple(aps)


CORRIDOR_WALLS_Y = (22.0, 33.0)
PARTITIONS_X = (14.5, 33.0, 52.0, 70.5)
DOOR_CENTERS_X = (10.0, 28.0, 47.0, 66.0, 78.0)
DOOR_WIDTH = 2.0


def default_walls(width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT) -> tuple[tuple[Point, ...], ...]:
    """Office floor: a corridor between two rows of five rooms, one AP per room.

    Each room opens onto the corridor through one doorway; rooms share solid
    partitions. A closed service core sits in the middle top room.
    """
    walls: list[tuple[Point, ...]] = []
    for y in CORRIDOR_WALLS_Y:
        x = 0.0
        for door in DOOR_CENTERS_X:
            walls.append(((x, y), (door - DOOR_WIDTH / 2, y)))
            x = door + DOOR_WIDTH / 2
        walls.append(((x, y), (width, y)))
    low, high = CORRIDOR_WALLS_Y
    for x in PARTITIONS_X:
        walls.append(((x, 0.0), (x, low)))
        walls.append(((x, high), (x, height)))
    walls.append(((38.0, 37.0), (47.0, 37.0), (47.0, 44.0), (38.0, 44.0)))
    return tuple(walls)


def default_site() -> SiteConfig:
    return SiteConfig(
        width=DEFAULT_WIDTH,
        height=DEFAULT_HEIGHT,
        aps=default_aps(),
        walls=default_walls(),
    )


def default_test_path() -> TruePath:
    return TruePath(
        waypoints=(
            (10.0, 12.0), (10.0, 27.5), (28.0, 27.5), (28.0, 44.0), (28.0, 27.5), (66.0, 27.5),
            (66.0, 12.0), (66.0, 27.5), (78.0, 27.5), (78.0, 44.0),
        ),
        speed=1.0,
        ranging_interval=DEFAULT_RANGING_INTERVAL,
    )
