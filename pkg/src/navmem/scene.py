"""Synthetic indoor scenes on an occupancy grid.

Rooms are laid out as a grid of rectangles separated by one-cell walls with
doorways between neighbours. Each room has a theme and draws its object
labels from that theme's vocabulary. Navigation is planar and 4-connected;
the z coordinate of an object is a fixed synthetic height.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import load_themes

Cell = tuple[int, int]

DEFAULT_THEMES = ("kitchen", "bathroom", "bedroom", "living room")
DEFAULT_GOALS = ("oven", "toilet", "bed", "tv")
_MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))


class NavigationError(RuntimeError):
    """Target unreachable or otherwise invalid for motion."""


@dataclass(frozen=True)
class SceneConfig:
    rooms: int = 4
    objects_per_room: int = 8
    grid_size: tuple[int, int] = (24, 24)
    themes: tuple[str, ...] = DEFAULT_THEMES
    goals: tuple[str, ...] = DEFAULT_GOALS
    door_width: int = 2
    max_height: int = 3
    min_same_label_gap: float = 2.0
    columns: int | None = None  # rooms per row; default is a near-square layout

    def __post_init__(self):
        if self.rooms < 1:
            raise ValueError("a scene needs at least one room")
        if not self.themes:
            raise ValueError("at least one theme is required")
        if self.objects_per_room < 0:
            raise ValueError("objects_per_room must be >= 0")

    def to_dict(self) -> dict:
        return {"rooms": self.rooms, "objects_per_room": self.objects_per_room,
                "grid_size": list(self.grid_size), "themes": list(self.themes), "goals": list(self.goals),
                "door_width": self.door_width, "max_height": self.max_height,
                "min_same_label_gap": self.min_same_label_gap, "columns": self.columns}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        data = dict(data)
        for key in ("grid_size", "themes", "goals"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class Room:
    rect: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive interior
    theme: str

    def contains(self, x: int, y: int) -> bool:
        x0, y0, x1, y1 = self.rect
        return x0 <= x <= x1 and y0 <= y <= y1

    def cells(self) -> list[Cell]:
        x0, y0, x1, y1 = self.rect
        return [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)]


@dataclass(frozen=True)
class PlacedObject:
    label: str
    position: tuple[int, int, int]
    room: int

    @property
    def cell(self) -> Cell:
        return self.position[0], self.position[1]


@dataclass
class Scene:
    width: int
    height: int
    walls: np.ndarray  # bool, indexed [y, x]
    rooms: list[Room]
    objects: list[PlacedObject]
    seed: int = 0
    config: dict = field(default_factory=dict)

    def is_free(self, cell: Sequence[int]) -> bool:
        x, y = int(cell[0]), int(cell[1])
        return 0 <= x < self.width and 0 <= y < self.height and not self.walls[y, x]

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def start_pool(self) -> list[Cell]:
        taken = {o.cell for o in self.objects}
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if not self.walls[y, x] and (x, y) not in taken]

    def room_of(self, cell: Sequence[int]) -> int | None:
        for i, room in enumerate(self.rooms):
            if room.contains(int(cell[0]), int(cell[1])):
                return i
        return None

    def instances(self, label: str) -> list[PlacedObject]:
        key = label.casefold()
        return [o for o in self.objects if o.label.casefold() == key]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        ys, xs = np.nonzero(self.walls)
        return {
            "seed": self.seed,
            "config": self.config,
            "grid": {"width": self.width, "height": self.height,
                     "walls": [[int(x), int(y)] for y, x in zip(ys, xs)]},
            "rooms": [{"rect": list(r.rect), "theme": r.theme} for r in self.rooms],
            "objects": [{"label": o.label, "position": list(o.position), "room": o.room} for o in self.objects],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        grid = data["grid"]
        walls = np.zeros((grid["height"], grid["width"]), dtype=bool)
        for x, y in grid["walls"]:
            walls[y, x] = True
        rooms = [Room(tuple(r["rect"]), r["theme"]) for r in data["rooms"]]
        scene = cls(grid["width"], grid["height"], walls, rooms, [], data.get("seed", 0), data.get("config", {}))
        for o in data["objects"]:
            room = o.get("room")
            if room is None:
                room = scene.room_of(o["position"])
            scene.objects.append(PlacedObject(o["label"], tuple(o["position"]), -1 if room is None else room))
        return scene

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Scene":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- generation ---------------------------------------------------------------


def _splits(total: int, parts: int) -> list[int]:
    """Wall coordinates splitting [0, total-1] into ``parts`` interiors."""
    return [round(j * (total - 1) / parts) for j in range(parts + 1)]


def _layout(cfg: SceneConfig) -> tuple[list[tuple[int, int, int, int]], list[list[int]]]:
    """Room rectangles plus the room index at each (row, col) slot.

    Slots fill row by row; the last room of a short final row stretches over
    the remaining columns.
    """
    ncols = cfg.columns or math.ceil(math.sqrt(cfg.rooms))
    nrows = math.ceil(cfg.rooms / ncols)
    width, height = cfg.grid_size
    xs, ys = _splits(width, ncols), _splits(height, nrows)
    if min(b - a for a, b in zip(xs, xs[1:])) < 3 or min(b - a for a, b in zip(ys, ys[1:])) < 3:
        raise ValueError(f"grid {cfg.grid_size} is too small for {cfg.rooms} rooms")
    rects, slots = [], []
    for r in range(nrows):
        row = []
        in_row = min(ncols, cfg.rooms - r * ncols)
        for c in range(in_row):
            c_end = ncols if c == in_row - 1 else c + 1
            rects.append((xs[c] + 1, ys[r] + 1, xs[c_end] - 1, ys[r + 1] - 1))
            row += [len(rects) - 1] * (c_end - c)
        slots.append(row)
    return rects, slots


def _carve_doors(walls: np.ndarray, rects, slots, rng: np.random.Generator, door_width: int) -> None:
    pairs = set()
    for r, row in enumerate(slots):
        for c, room in enumerate(row):
            if c + 1 < len(row) and row[c + 1] != room:
                pairs.add((room, row[c + 1]))
            if r + 1 < len(slots) and slots[r + 1][c] != room:
                pairs.add((room, slots[r + 1][c]))
    for a, b in sorted(pairs):
        ax0, ay0, ax1, ay1 = rects[a]
        bx0, by0, bx1, by1 = rects[b]
        if bx0 > ax1:  # b to the right of a: vertical wall at x = ax1 + 1
            lo, hi = max(ay0, by0), min(ay1, by1)
            w = min(door_width, hi - lo + 1)
            start = int(rng.integers(lo, hi - w + 2))
            walls[start:start + w, ax1 + 1] = False
        else:  # b below a: horizontal wall at y = ay1 + 1
            lo, hi = max(ax0, bx0), min(ax1, bx1)
            w = min(door_width, hi - lo + 1)
            start = int(rng.integers(lo, hi - w + 2))
            walls[ay1 + 1, start:start + w] = False


def _door_cells(walls: np.ndarray, rects) -> set[Cell]:
    """Free cells in front of doorways; objects are kept off them."""
    out = set()
    h, w = walls.shape
    for y in range(h):
        for x in range(w):
            if walls[y, x] or any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in rects):
                continue
            for dx, dy in _MOVES:
                out.add((x + dx, y + dy))
    return out


def generate_scene(seed: int, cfg: SceneConfig = SceneConfig()) -> Scene:
    """Deterministic themed scene for ``(seed, cfg)``.

    Themes are assigned to rooms in a seeded order (cycling when there are more
    rooms than themes). Every requested goal category gets at least one
    instance, placed in a room whose theme lists it when possible.
    """
    rng = np.random.default_rng(seed)
    vocab = load_themes()
    for t in cfg.themes:
        if t not in vocab:
            raise ValueError(f"unknown theme {t!r}")
    width, height = cfg.grid_size
    rects, slots = _layout(cfg)
    walls = np.ones((height, width), dtype=bool)
    for x0, y0, x1, y1 in rects:
        walls[y0:y1 + 1, x0:x1 + 1] = False
    _carve_doors(walls, rects, slots, rng, cfg.door_width)

    order = [cfg.themes[i] for i in rng.permutation(len(cfg.themes))]
    rooms = [Room(rect, order[i % len(order)]) for i, rect in enumerate(rects)]

    labels_per_room: list[list[str]] = []
    for room in rooms:
        words = vocab[room.theme]
        picks = rng.permutation(len(words))[:cfg.objects_per_room]
        labels = [words[i] for i in picks]
        while len(labels) < cfg.objects_per_room:
            labels.append(words[int(rng.integers(len(words)))])
        labels_per_room.append(labels)
    for goal in cfg.goals:
        if any(goal in labels for labels in labels_per_room):
            continue
        homes = [i for i, r in enumerate(rooms) if goal in vocab[r.theme]] or list(range(len(rooms)))
        home = homes[int(rng.integers(len(homes)))]
        labels = labels_per_room[home]
        protected = set(cfg.goals)
        slots_free = [k for k, lab in enumerate(labels) if lab not in protected]
        if slots_free:
            labels[slots_free[int(rng.integers(len(slots_free)))]] = goal
        else:
            labels.append(goal)

    blocked = _door_cells(walls, rects)
    objects: list[PlacedObject] = []
    taken: set[Cell] = set()
    for idx, (room, labels) in enumerate(zip(rooms, labels_per_room)):
        cells = [c for c in room.cells() if c not in blocked]
        for label in labels:
            ok = [c for c in cells if c not in taken and all(
                math.dist(c, o.cell) > cfg.min_same_label_gap for o in objects if o.label == label)]
            if not ok:
                continue
            x, y = ok[int(rng.integers(len(ok)))]
            z = int(rng.integers(0, cfg.max_height + 1))
            taken.add((x, y))
            objects.append(PlacedObject(label, (x, y, z), idx))
    cfg_dict = cfg.to_dict()
    return Scene(width, height, walls, rooms, objects, seed, cfg_dict)


# -- perception and motion ----------------------------------------------------


def line_cells(a: Cell, b: Cell) -> list[Cell]:
    """Integer ray from a to b (Bresenham), endpoints included."""
    x0, y0 = a
    x1, y1 = b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x1 > x0 else -1), (1 if y1 > y0 else -1)
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if (x0, y0) == (x1, y1):
            return out
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def line_of_sight(scene: Scene, a: Cell, b: Cell) -> bool:
    """True when no wall lies on the ray strictly between a and b."""
    return not any(scene.walls[y, x] for x, y in line_cells(a, b)[1:-1])


def detect(scene: Scene, position: Sequence[int], detection_range: float = 8.0) -> list[tuple[str, tuple[int, int, int]]]:
    """Objects within planar Euclidean range and with clear line of sight, in scene order."""
    here = (int(position[0]), int(position[1]))
    out = []
    for obj in scene.objects:
        if math.dist(here, obj.cell) <= detection_range and line_of_sight(scene, here, obj.cell):
            out.append((obj.label, obj.position))
    return out


def visible_cells(scene: Scene, position: Sequence[int], detection_range: float = 8.0) -> list[Cell]:
    """Cells the sensor observes from ``position`` (walls included)."""
    px, py = int(position[0]), int(position[1])
    r = int(math.floor(detection_range))
    out = []
    for y in range(max(0, py - r), min(scene.height, py + r + 1)):
        for x in range(max(0, px - r), min(scene.width, px + r + 1)):
            if math.dist((px, py), (x, y)) <= detection_range and line_of_sight(scene, (px, py), (x, y)):
                out.append((x, y))
    return out


def bfs_distances(scene: Scene, start: Sequence[int]) -> np.ndarray:
    """4-connected step counts from ``start``; -1 for unreachable or wall cells."""
    dist = np.full((scene.height, scene.width), -1, dtype=np.int64)
    sx, sy = int(start[0]), int(start[1])
    if not scene.is_free((sx, sy)):
        raise NavigationError(f"start {(sx, sy)} is not a free cell")
    dist[sy, sx] = 0
    queue = deque([(sx, sy)])
    while queue:
        x, y = queue.popleft()
        d = dist[y, x] + 1
        for dx, dy in _MOVES:
            nx, ny = x + dx, y + dy
            if 0 <= nx < scene.width and 0 <= ny < scene.height and dist[ny, nx] < 0 and not scene.walls[ny, nx]:
                dist[ny, nx] = d
                queue.append((nx, ny))
    return dist


def shortest_path(scene: Scene, start: Sequence[int], target: Sequence[int]) -> list[Cell]:
    """Cells of one shortest 4-connected path, start and target included."""
    sx, sy = int(start[0]), int(start[1])
    tx, ty = int(target[0]), int(target[1])
    if not scene.is_free((tx, ty)):
        raise NavigationError(f"target {(tx, ty)} is not a free cell")
    dist = bfs_distances(scene, (sx, sy))
    if dist[ty, tx] < 0:
        raise NavigationError(f"target {(tx, ty)} is unreachable from {(sx, sy)}")
    path = [(tx, ty)]
    x, y = tx, ty
    while (x, y) != (sx, sy):
        for dx, dy in _MOVES:
            nx, ny = x + dx, y + dy
            if 0 <= nx < scene.width and 0 <= ny < scene.height and dist[ny, nx] == dist[y, x] - 1:
                x, y = nx, ny
                break
        path.append((x, y))
    return path[::-1]


@dataclass
class AgentState:
    position: Cell
    path_length: float = 0.0
    step_index: int = 0
    visited: list[int] = field(default_factory=list)


def move_to(scene: Scene, agent: AgentState, target: Sequence[int]) -> float:
    """Walk the agent along a shortest path to ``target``; returns the distance traveled."""
    path = shortest_path(scene, agent.position, target)
    traveled = float(len(path) - 1)
    agent.position = path[-1]
    agent.path_length += traveled
    return traveled


def nearest_frontier(scene: Scene, explored: np.ndarray, dist: np.ndarray) -> Cell | None:
    """Closest reachable explored free cell bordering unexplored space.

    ``dist`` are BFS distances from the agent; the agent's own cell is skipped.
    Ties go to the smallest (y, x).
    """
    h, w = explored.shape
    unexplored = ~explored
    border = np.zeros_like(explored)
    border[:, :-1] |= unexplored[:, 1:]
    border[:, 1:] |= unexplored[:, :-1]
    border[:-1, :] |= unexplored[1:, :]
    border[1:, :] |= unexplored[:-1, :]
    mask = explored & border & ~scene.walls & (dist > 0)
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    d = dist[ys, xs]
    best = np.lexsort((xs, ys, d))[0]
    return int(xs[best]), int(ys[best])


def reachable_from(scene: Scene, start: Sequence[int]) -> np.ndarray:
    return bfs_distances(scene, start) >= 0
