"""Arena geometry: map files, collision queries and lidar raycasting.

Obstacles are axis-aligned rectangles; the arena boundary acts as the outer
wall. Rays are intersected analytically with every box (slab test), so a
scan costs one vectorised pass over ``n_beams x n_obstacles``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

DEFAULT_CLEARANCE = 0.8  # uav_radius + goal_radius at the default env config

_TOP_LEVEL_KEYS = {"name", "width", "height", "obstacles", "spawn_cells"}


class MapError(ValueError):
    """Raised for unreadable, malformed or invariant-violating maps."""


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise MapError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class Rect:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise MapError(f"non-finite rectangle {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise MapError(f"degenerate rectangle {vals}")


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = 24
    max_range: float = 10.0
    fov: float = 2 * math.pi

    def __post_init__(self):
        if self.n_beams < 1:
            raise ValueError("n_beams must be >= 1")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if not 0 < self.fov <= 2 * math.pi:
            raise ValueError("fov must lie in (0, 2*pi]")

    def beam_offsets(self) -> np.ndarray:
        """Body-frame beam angles, evenly spaced and centred on the heading."""
        k = np.arange(self.n_beams, dtype=np.float64)
        return self.fov * (k / self.n_beams) - self.fov / 2


@dataclass(frozen=True, eq=False)
class WorldMap:
    width: float
    height: float
    obstacles: tuple[Rect, ...]
    spawn_cells: tuple[Point2, ...]
    name: str = "unnamed"
    # (n, 4) array of [x_min, y_min, x_max, y_max]; derived, excluded from equality
    boxes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "spawn_cells", tuple(self.spawn_cells))
        boxes = np.array(
            [[r.x_min, r.y_min, r.x_max, r.y_max] for r in self.obstacles],
            dtype=np.float64,
        ).reshape(-1, 4)
        boxes.setflags(write=False)
        object.__setattr__(self, "boxes", boxes)

    def __eq__(self, other):
        if not isinstance(other, WorldMap):
            return NotImplemented
        return (
            self.name == other.name
            and self.width == other.width
            and self.height == other.height
            and self.obstacles == other.obstacles
            and self.spawn_cells == other.spawn_cells
        )

    __hash__ = None

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def validate(self, clearance: float = DEFAULT_CLEARANCE) -> None:
        """Raise MapError on the first violated invariant."""
        if not (math.isfinite(self.width) and self.width > 0):
            raise MapError(f"width must be positive, got {self.width}")
        if not (math.isfinite(self.height) and self.height > 0):
            raise MapError(f"height must be positive, got {self.height}")
        for i, r in enumerate(self.obstacles):
            if r.x_min <= 0 or r.y_min <= 0 or r.x_max >= self.width or r.y_max >= self.height:
                raise MapError(
                    f"obstacle {i} ({r.x_min}, {r.y_min}, {r.x_max}, {r.y_max}) "
                    f"is out of bounds for a {self.width:g}x{self.height:g} map"
                )
        if len(self.spawn_cells) < 4:
            raise MapError(f"need at least 4 spawn cells, got {len(self.spawn_cells)}")
        if len(set(self.spawn_cells)) != len(self.spawn_cells):
            raise MapError("spawn cells must be distinct")
        for i, p in enumerate(self.spawn_cells):
            if collides(self, p, clearance):
                raise MapError(
                    f"spawn cell {i} ({p.x}, {p.y}) violates clearance {clearance:g} m "
                    "to obstacles or walls"
                )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "obstacles": [
                {"x_min": r.x_min, "y_min": r.y_min, "x_max": r.x_max, "y_max": r.y_max}
                for r in self.obstacles
            ],
            "spawn_cells": [{"x": p.x, "y": p.y} for p in self.spawn_cells],
        }


def _number(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MapError(f"{what} must be a number, got {value!r}")
    return float(value)


def map_from_dict(doc, clearance: float = DEFAULT_CLEARANCE) -> WorldMap:
    if not isinstance(doc, dict):
        raise MapError("map document must be a JSON object")
    unknown = set(doc) - _TOP_LEVEL_KEYS
    if unknown:
        raise MapError(f"unknown top-level keys: {sorted(unknown)}")
    missing = _TOP_LEVEL_KEYS - set(doc)
    if missing:
        raise MapError(f"missing keys: {sorted(missing)}")
    if not isinstance(doc["name"], str):
        raise MapError("name must be a string")
    if not isinstance(doc["obstacles"], list) or not isinstance(doc["spawn_cells"], list):
        raise MapError("obstacles and spawn_cells must be lists")
    try:
        obstacles = [
            Rect(*(_number(o[k], f"obstacle {i} {k}") for k in ("x_min", "y_min", "x_max", "y_max")))
            for i, o in enumerate(doc["obstacles"])
        ]
        cells = [
            Point2(_number(c["x"], f"spawn cell {i} x"), _number(c["y"], f"spawn cell {i} y"))
            for i, c in enumerate(doc["spawn_cells"])
        ]
    except (KeyError, TypeError) as exc:
        raise MapError(f"malformed obstacle or spawn cell entry: {exc}") from exc
    world = WorldMap(
        width=_number(doc["width"], "width"),
        height=_number(doc["height"], "height"),
        obstacles=tuple(obstacles),
        spawn_cells=tuple(cells),
        name=doc["name"],
    )
    world.validate(clearance)
    return world


BUNDLED_MAPS = ("stage1_free", "stage2_obstacles", "desk_free", "desk_obstacles")


def bundled_map_path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in BUNDLED_MAPS:
        raise MapError(f"no bundled map named {name!r}")
    return Path(str(resources.files("marl_nav") / "maps" / f"{stem}.json"))


def resolve_map_path(ref: str | Path) -> Path:
    """A filesystem path if it exists, otherwise a bundled map name."""
    p = Path(ref)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if stem in BUNDLED_MAPS:
        return bundled_map_path(stem)
    return p


def load_map(path, clearance: float = DEFAULT_CLEARANCE) -> WorldMap:
    path = resolve_map_path(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MapError(f"cannot read map file {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapError(f"malformed JSON in {path}: {exc}") from exc
    return map_from_dict(doc, clearance)


def save_map(world: WorldMap, path) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=2) + "\n")


def collides(world: WorldMap, p: Point2, radius: float) -> bool:
    """True iff the disc leaves the arena or touches an obstacle."""
    return disc_collides(world, p.x, p.y, radius)


def disc_collides(world: WorldMap, x: float, y: float, radius: float) -> bool:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if x - radius < 0 or y - radius < 0 or x + radius > world.width or y + radius > world.height:
        return True
    for r in world.obstacles:
        dx = max(r.x_min - x, 0.0, x - r.x_max)
        dy = max(r.y_min - y, 0.0, y - r.y_max)
        if dx * dx + dy * dy <= radius * radius:
            return True
    return False


def _inside_obstacle(world: WorldMap, x: float, y: float) -> bool:
    return any(r.x_min <= x <= r.x_max and r.y_min <= y <= r.y_max for r in world.obstacles)


def _check_origin(world: WorldMap, x: float, y: float) -> None:
    if not (0 <= x <= world.width and 0 <= y <= world.height):
        raise ValueError(f"ray origin ({x}, {y}) is outside the arena")
    if _inside_obstacle(world, x, y):
        raise ValueError(f"ray origin ({x}, {y}) is inside an obstacle")


def cast_rays(world: WorldMap, x: float, y: float, angles: np.ndarray, max_range: float) -> np.ndarray:
    """Capped hit distances for rays from one origin, no precondition checks."""
    angles = np.asarray(angles, dtype=np.float64)
    dx = np.cos(angles)
    dy = np.sin(angles)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # exit distance through the arena walls
        tx = np.where(dx > 0, (world.width - x) / dx, np.where(dx < 0, -x / dx, np.inf))
        ty = np.where(dy > 0, (world.height - y) / dy, np.where(dy < 0, -y / dy, np.inf))
        hit = np.minimum(tx, ty)
        boxes = world.boxes
        if len(boxes):
            dxc = dx[:, None]
            dyc = dy[:, None]
            x0 = (boxes[:, 0] - x) / dxc
            x1 = (boxes[:, 2] - x) / dxc
            y0 = (boxes[:, 1] - y) / dyc
            y1 = (boxes[:, 3] - y) / dyc
            in_x = (boxes[:, 0] <= x) & (x <= boxes[:, 2])
            in_y = (boxes[:, 1] <= y) & (y <= boxes[:, 3])
            # axis-parallel rays: the slab is either everything or nothing
            par_x = dxc == 0
            par_y = dyc == 0
            xn = np.where(par_x, np.where(in_x, -np.inf, np.inf), np.minimum(x0, x1))
            xf = np.where(par_x, np.where(in_x, np.inf, -np.inf), np.maximum(x0, x1))
            yn = np.where(par_y, np.where(in_y, -np.inf, np.inf), np.minimum(y0, y1))
            yf = np.where(par_y, np.where(in_y, np.inf, -np.inf), np.maximum(y0, y1))
            t_near = np.maximum(xn, yn)
            t_far = np.minimum(xf, yf)
            valid = (t_near <= t_far) & (t_near >= 0)
            t_box = np.where(valid, t_near, np.inf).min(axis=1)
            hit = np.minimum(hit, t_box)
    return np.minimum(hit, max_range)


def raycast(world: WorldMap, origin: Point2, angle: float, cfg: LidarConfig) -> float:
    _check_origin(world, origin.x, origin.y)
    return float(cast_rays(world, origin.x, origin.y, np.array([angle]), cfg.max_range)[0])


def beam_angles(yaw: float, cfg: LidarConfig) -> np.ndarray:
    # evaluated left to right so single-ray raycasts reproduce each beam bit-for-bit
    k = np.arange(cfg.n_beams, dtype=np.float64)
    return yaw + cfg.fov * (k / cfg.n_beams) - cfg.fov / 2


def scan(world: WorldMap, pose, cfg: LidarConfig) -> np.ndarray:
    """Lidar ranges for ``pose`` (anything with ``x``, ``y``, ``yaw``)."""
    _check_origin(world, pose.x, pose.y)
    return cast_rays(world, pose.x, pose.y, beam_angles(pose.yaw, cfg), cfg.max_range)


def sample_tasks(world: WorldMap, rng: np.random.Generator):
    """Two (start, goal) pairs from four distinct spawn cells."""
    n = len(world.spawn_cells)
    if n < 4:
        raise MapError(f"need at least 4 spawn cells, got {n}")
    idx = rng.choice(n, size=4, replace=False)
    s1, g1, s2, g2 = (world.spawn_cells[i] for i in idx)
    return (s1, g1), (s2, g2)
