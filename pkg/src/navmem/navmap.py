"""Graph-style navigation map: detected objects, their groups, and prompt rendering.

Groups are append-only. Group numbers in rendered text are 1-based positions in
the group list, so a group's rendering only ever grows at its end; cached KV
prefixes for a group therefore stay valid after new members are appended.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

Position = tuple[int, int, int]

DEFAULT_DEDUP_RADIUS = 2.0

INSTRUCTION_TEMPLATE = (
    "Instruction: You are a navigation robot. The above is a description of different "
    "objects in the environment that you have seen. Your final goal is to find the {goal} "
    "in the environment. Based on the environmental information, please choose one specific "
    "object to travel to as your sub-goal, following such format: \"The next subgoal is xxx "
    "at position (xx, xx, xx)\". Here are the objects that you have traveled to before: "
)


class MapError(KeyError):
    """Unknown object or group id."""


@dataclass
class ObjectEntry:
    id: int
    label: str
    position: Position
    discovered_step: int
    visited: bool = False

    def render(self) -> str:
        x, y, z = self.position
        return f"{{object: {self.label}, position:({x},{y},{z})}}"


@dataclass
class ObjectGroup:
    group_id: int
    members: list[int] = field(default_factory=list)
    created_step: int = 0


def format_position(position: Sequence[int]) -> str:
    x, y, z = position
    return f"({x},{y},{z})"


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.sqrt(sum((float(p) - float(q)) ** 2 for p, q in zip(a, b)))


class NavigationMap:
    """Objects, groups and trajectory of one navigation episode.

    Newly detected objects sit in ``staged`` until a clusterer places them with
    :meth:`place` or :meth:`new_group`. Staged objects are never rendered.
    """

    def __init__(self, dedup_radius: float = DEFAULT_DEDUP_RADIUS):
        self.dedup_radius = float(dedup_radius)
        self.objects: dict[int, ObjectEntry] = {}
        self.groups: list[ObjectGroup] = []
        self.trajectory: list[int] = []
        self.staged: list[int] = []
        self.max_step = 0
        self._next_object_id = 1
        self._next_group_id = 1
        self._group_index: dict[int, int] = {}
        self._object_group: dict[int, int] = {}

    # -- mutation -----------------------------------------------------------

    def add_detections(self, step: int, detections: Iterable[tuple[str, Sequence[int]]]) -> list[int]:
        """Insert detections not already on the map; return the new ids in input order.

        A detection duplicates an existing object when the labels are equal and the
        positions lie within ``dedup_radius`` (Euclidean). Duplicates are dropped.
        """
        if step < self.max_step:
            raise ValueError(f"step {step} precedes the latest map step {self.max_step}")
        self.max_step = step
        new_ids = []
        for label, position in detections:
            pos = tuple(int(c) for c in position)
            if len(pos) != 3 or min(pos) < 0:
                raise ValueError(f"position must be a non-negative integer triple, got {position!r}")
            if self._is_duplicate(label, pos):
                continue
            oid = self._next_object_id
            self._next_object_id += 1
            self.objects[oid] = ObjectEntry(oid, label, pos, step)
            self.staged.append(oid)
            new_ids.append(oid)
        return new_ids

    def _is_duplicate(self, label: str, pos: Position) -> bool:
        for obj in self.objects.values():
            if obj.label == label and distance(obj.position, pos) <= self.dedup_radius:
                return True
        return False

    def new_group(self, object_ids: Sequence[int], step: int) -> int:
        gid = self._next_group_id
        self._next_group_id += 1
        self._group_index[gid] = len(self.groups)
        self.groups.append(ObjectGroup(gid, [], step))
        for oid in object_ids:
            self.place(oid, gid)
        return gid

    def place(self, object_id: int, group_id: int) -> None:
        """Append a staged object to the end of an existing group."""
        if object_id not in self.objects:
            raise MapError(f"unknown object {object_id}")
        if object_id in self._object_group:
            raise ValueError(f"object {object_id} already belongs to group {self._object_group[object_id]}")
        group = self.group(group_id)
        group.members.append(object_id)
        self._object_group[object_id] = group_id
        self.staged.remove(object_id)

    def mark_visited(self, object_id: int) -> None:
        obj = self.object(object_id)
        if not obj.visited:
            obj.visited = True
            self.trajectory.append(object_id)

    # -- lookup -------------------------------------------------------------

    def object(self, object_id: int) -> ObjectEntry:
        try:
            return self.objects[object_id]
        except KeyError:
            raise MapError(f"unknown object {object_id}") from None

    def group(self, group_id: int) -> ObjectGroup:
        try:
            return self.groups[self._group_index[group_id]]
        except KeyError:
            raise MapError(f"unknown group {group_id}") from None

    def group_number(self, group_id: int) -> int:
        """1-based position of the group in the map's group list."""
        self.group(group_id)
        return self._group_index[group_id] + 1

    def group_of(self, object_id: int) -> int | None:
        return self._object_group.get(object_id)

    def group_ids(self) -> list[int]:
        return [g.group_id for g in self.groups]

    def group_labels(self, group_id: int) -> list[str]:
        return [self.objects[oid].label for oid in self.group(group_id).members]

    def group_centroid(self, group_id: int) -> tuple[float, float, float] | None:
        members = self.group(group_id).members
        if not members:
            return None
        n = len(members)
        return tuple(sum(self.objects[oid].position[i] for oid in members) / n for i in range(3))

    def find_goal(self, goal_label: str) -> int | None:
        """Lowest-id unvisited object whose label matches ``goal_label`` case-insensitively."""
        want = goal_label.casefold()
        for oid in sorted(self.objects):
            obj = self.objects[oid]
            if not obj.visited and obj.label.casefold() == want:
                return oid
        return None

    # -- rendering ----------------------------------------------------------

    def render_group(self, group_id: int) -> str:
        group = self.group(group_id)
        body = ", ".join(self.objects[oid].render() for oid in group.members)
        return f"Object Group {self.group_number(group_id)}: {body}"

    def render_appended(self, group_id: int, n_before: int) -> str:
        """Text appended to a group's rendering by members ``n_before`` onwards.

        ``render_group`` over the first ``n_before`` members, followed by this
        text, equals ``render_group`` over all members.
        """
        group = self.group(group_id)
        tail = group.members[n_before:]
        if not tail:
            return ""
        body = ", ".join(self.objects[oid].render() for oid in tail)
        return ", " + body if n_before > 0 else body

    def render_trajectory(self, trajectory: Sequence[int] | None = None) -> str:
        ids = self.trajectory if trajectory is None else list(trajectory)
        if not ids:
            return ""
        parts = []
        for oid in ids:
            obj = self.object(oid)
            parts.append(f"the {obj.label} at position {format_position(obj.position)}")
        if len(parts) == 1:
            listed = parts[0]
        else:
            listed = ", ".join(parts[:-1]) + " and " + parts[-1]
        return f"Trajectory: You have visited {listed}."

    def render_instruction(self, goal: str) -> str:
        return INSTRUCTION_TEMPLATE.format(goal=goal)

    def render_suffix(self, goal: str, trajectory: Sequence[int] | None = None) -> str:
        """Instruction and trajectory blocks: everything in the prompt after the groups."""
        blocks = [self.render_instruction(goal)]
        traj = self.render_trajectory(trajectory)
        if traj:
            blocks.append(traj)
        return "\n".join(blocks)

    def render_prompt(self, selected: Sequence[int], goal: str, trajectory: Sequence[int] | None = None) -> str:
        """Full planner prompt: selected groups in map order, instruction, trajectory."""
        for gid in selected:
            self.group(gid)
        chosen = set(selected)
        blocks = [self.render_group(g.group_id) for g in self.groups if g.group_id in chosen]
        blocks.append(self.render_suffix(goal, trajectory))
        return "\n".join(blocks)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "objects": [
                {"id": o.id, "label": o.label, "position": list(o.position), "visited": o.visited}
                for o in (self.objects[k] for k in sorted(self.objects))
            ],
            "groups": [{"id": g.group_id, "members": list(g.members)} for g in self.groups],
            "trajectory": list(self.trajectory),
            "staged": list(self.staged),
        }

    @classmethod
    def from_dict(cls, data: dict, dedup_radius: float = DEFAULT_DEDUP_RADIUS) -> "NavigationMap":
        nav = cls(dedup_radius)
        for rec in data["objects"]:
            oid = int(rec["id"])
            nav.objects[oid] = ObjectEntry(oid, rec["label"], tuple(rec["position"]), 0, bool(rec["visited"]))
            nav._next_object_id = max(nav._next_object_id, oid + 1)
        nav.staged = list(nav.objects)
        for rec in data["groups"]:
            gid = int(rec["id"])
            nav._group_index[gid] = len(nav.groups)
            nav.groups.append(ObjectGroup(gid, []))
            nav._next_group_id = max(nav._next_group_id, gid + 1)
            for oid in rec["members"]:
                nav.place(oid, gid)
        nav.trajectory = list(data.get("trajectory", []))
        return nav
