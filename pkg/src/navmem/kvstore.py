"""Two-tier, group-granular KV-cache store.

The device tier holds deserialized blocks under a byte budget; the backing tier
holds serialized blocks (a directory of ``group_<id>.kv`` files, or an in-memory
dict when no directory is given). Blocks are promoted once per planning step
and evicted least-recently-used.
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .attention import KVBlock


class Tier(enum.Enum):
    DEVICE = "device"
    BACKING = "backing"


class BudgetInfeasibleError(RuntimeError):
    """The requested groups cannot fit in the device budget at all."""


@dataclass
class GroupCacheEntry:
    group_id: int
    size_bytes: int
    tier: Tier
    last_used_step: int = -1
    touch: int = 0
    block: KVBlock | None = None  # present only while on device
    pinned_bytes: int = 0


@dataclass
class LoadReport:
    step: int
    hits: int
    misses: int
    loaded_bytes: int
    evicted: list[int]
    device_bytes: int = 0

    @property
    def requested(self) -> int:
        return self.hits + self.misses


@dataclass
class StoreStats:
    cumulative_loaded_bytes: int = 0
    cumulative_hits: int = 0
    cumulative_misses: int = 0
    reports: list[LoadReport] = field(default_factory=list)

    def copy(self) -> "StoreStats":
        return StoreStats(self.cumulative_loaded_bytes, self.cumulative_hits, self.cumulative_misses,
                          list(self.reports))


def hit_rate(stats: StoreStats, window: tuple[int, int] | None = None) -> float | None:
    """Hits over requests for steps in ``window`` (inclusive), or cumulative.

    Returns None when the window saw no requests, which is not the same as 0.
    """
    if window is None:
        hits, total = stats.cumulative_hits, stats.cumulative_hits + stats.cumulative_misses
    else:
        lo, hi = window
        sel = [r for r in stats.reports if lo <= r.step <= hi]
        hits = sum(r.hits for r in sel)
        total = sum(r.requested for r in sel)
    if total == 0:
        return None
    return hits / total


class KVStore:
    """Device/backing KV store with LRU eviction.

    ``pinned_layers`` keeps the first layers of every backing-tier group on the
    device (they feed the clustering probe); those bytes count against the budget.
    """

    def __init__(self, budget_bytes: int, backing_dir: str | os.PathLike | None = None, pinned_layers: int = 0):
        if budget_bytes < 0:
            raise ValueError("budget_bytes must be >= 0")
        self.budget_bytes = int(budget_bytes)
        self.pinned_layers = int(pinned_layers)
        self.backing_dir = Path(backing_dir) if backing_dir is not None else None
        if self.backing_dir is not None:
            self.backing_dir.mkdir(parents=True, exist_ok=True)
        self._backing: dict[int, bytes] = {}
        self.entries: dict[int, GroupCacheEntry] = {}
        self.stats = StoreStats()
        self._touch = 0

    # -- backing tier io ----------------------------------------------------

    def _path(self, group_id: int) -> Path:
        return self.backing_dir / f"group_{group_id}.kv"

    def _write_backing(self, block: KVBlock) -> None:
        data = block.to_bytes()
        if self.backing_dir is None:
            self._backing[block.group_id] = data
        else:
            self._path(block.group_id).write_bytes(data)

    def _read_backing(self, group_id: int) -> KVBlock:
        if self.backing_dir is None:
            data = self._backing[group_id]
        else:
            data = self._path(group_id).read_bytes()
        return KVBlock.from_bytes(data)

    def _drop_backing(self, group_id: int) -> None:
        if self.backing_dir is None:
            self._backing.pop(group_id, None)
        else:
            self._path(group_id).unlink(missing_ok=True)

    # -- accounting ---------------------------------------------------------

    def device_bytes(self) -> int:
        total = 0
        for e in self.entries.values():
            total += e.size_bytes if e.tier is Tier.DEVICE else e.pinned_bytes
        return total

    def plannable_budget(self) -> int:
        """Budget left for full blocks once every group's pinned layers are reserved."""
        return max(0, self.budget_bytes - sum(e.pinned_bytes for e in self.entries.values()))

    def size(self, group_id: int) -> int:
        return self._entry(group_id).size_bytes

    def tier(self, group_id: int) -> Tier:
        return self._entry(group_id).tier

    def resident(self) -> list[int]:
        return sorted(g for g, e in self.entries.items() if e.tier is Tier.DEVICE)

    def __contains__(self, group_id: int) -> bool:
        return group_id in self.entries

    def _entry(self, group_id: int) -> GroupCacheEntry:
        try:
            return self.entries[group_id]
        except KeyError:
            raise KeyError(f"no cache entry for group {group_id}") from None

    def _pinned(self, block: KVBlock) -> int:
        return block.layer_bytes(self.pinned_layers) if self.pinned_layers else 0

    # -- operations ---------------------------------------------------------

    def get(self, group_id: int) -> KVBlock:
        """Return the block without changing residency or statistics."""
        entry = self._entry(group_id)
        if entry.tier is Tier.DEVICE:
            return entry.block
        return self._read_backing(group_id)

    def put(self, group_id: int, block: KVBlock, resident: bool = False, step: int = 0) -> list[int]:
        """Insert a block; returns any groups evicted to make room.

        New entries land in the backing tier unless ``resident`` is set, in which
        case they are admitted to the device tier (evicting LRU groups; a block
        larger than the whole budget still goes to backing). Existing entries
        keep their tier.
        """
        if block.group_id != group_id:
            raise ValueError(f"block belongs to group {block.group_id}, not {group_id}")
        entry = self.entries.get(group_id)
        if entry is None:
            entry = GroupCacheEntry(group_id, block.nbytes, Tier.BACKING, pinned_bytes=self._pinned(block))
            self.entries[group_id] = entry
            if not resident:
                self._write_backing(block)
                return []
            entry.tier = Tier.DEVICE
            entry.block = block
            entry.last_used_step = step
            self._touch += 1
            entry.touch = self._touch
            return self._fit(protect={group_id})
        entry.size_bytes = block.nbytes
        entry.pinned_bytes = self._pinned(block)
        if entry.tier is Tier.DEVICE:
            entry.block = block
            return self._fit(protect={group_id})
        self._write_backing(block)
        return []

    def append(self, group_id: int, delta: KVBlock) -> list[int]:
        """Append rows to a cached block in place; returns any groups evicted to make room."""
        entry = self._entry(group_id)
        if delta.token_count == 0:
            return []
        if entry.tier is Tier.DEVICE:
            entry.block = entry.block.concat(delta)
            block = entry.block
        else:
            block = self._read_backing(group_id).concat(delta)
            self._write_backing(block)
        entry.size_bytes = block.nbytes
        entry.pinned_bytes = self._pinned(block)
        if entry.tier is Tier.DEVICE:
            return self._fit(protect={group_id})
        return []

    def ensure_resident(self, requested: Sequence[int], step: int, budget_bytes: int | None = None) -> LoadReport:
        """Promote every requested group to the device tier, evicting LRU others as needed."""
        if budget_bytes is not None:
            self.budget_bytes = int(budget_bytes)
        want = list(dict.fromkeys(requested))
        entries = [self._entry(g) for g in want]
        need = sum(e.size_bytes for e in entries)
        wanted = set(want)
        others_pinned = sum(e.pinned_bytes for g, e in self.entries.items() if g not in wanted)
        if need + others_pinned > self.budget_bytes:
            raise BudgetInfeasibleError(
                f"requested groups need {need} bytes (+{others_pinned} pinned) > budget {self.budget_bytes}")
        hits = [e for e in entries if e.tier is Tier.DEVICE]
        misses = [e for e in entries if e.tier is Tier.BACKING]
        incoming = sum(e.size_bytes - e.pinned_bytes for e in misses)
        evicted = self._evict(self.device_bytes() + incoming, protect=wanted)
        loaded = 0
        for e in misses:
            e.block = self._read_backing(e.group_id)
            e.tier = Tier.DEVICE
            loaded += e.size_bytes
        for e in entries:
            e.last_used_step = step
            self._touch += 1
            e.touch = self._touch
        report = LoadReport(step, len(hits), len(misses), loaded, evicted, self.device_bytes())
        self.stats.cumulative_hits += report.hits
        self.stats.cumulative_misses += report.misses
        self.stats.cumulative_loaded_bytes += loaded
        self.stats.reports.append(report)
        return report

    def demote(self, group_id: int) -> None:
        entry = self._entry(group_id)
        if entry.tier is Tier.DEVICE:
            self._write_backing(entry.block)
            entry.block = None
            entry.tier = Tier.BACKING

    def _evict(self, usage: int, protect: set[int]) -> list[int]:
        evicted = []
        if usage <= self.budget_bytes:
            return evicted
        victims = sorted((e for g, e in self.entries.items() if e.tier is Tier.DEVICE and g not in protect),
                         key=lambda e: (e.last_used_step, e.touch, e.group_id))
        for e in victims:
            if usage <= self.budget_bytes:
                break
            self.demote(e.group_id)
            usage -= e.size_bytes - e.pinned_bytes
            evicted.append(e.group_id)
        return evicted

    def _fit(self, protect: set[int]) -> list[int]:
        evicted = self._evict(self.device_bytes(), protect)
        # the protected group alone may still overflow; it goes back to backing
        for g in sorted(protect):
            if self.device_bytes() > self.budget_bytes and self.entries[g].tier is Tier.DEVICE:
                self.demote(g)
                evicted.append(g)
        return evicted

    def drop(self, group_id: int) -> None:
        self._entry(group_id)
        del self.entries[group_id]
        self._drop_backing(group_id)

    # -- export -------------------------------------------------------------

    def stats_snapshot(self) -> StoreStats:
        return self.stats.copy()

    def write_stats_csv(self, path: str | os.PathLike) -> None:
        write_stats_csv(self.stats.reports, path)


def write_stats_csv(reports: Iterable[LoadReport], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "hits", "misses", "loaded_bytes", "device_bytes"])
        for r in reports:
            writer.writerow([r.step, r.hits, r.misses, r.loaded_bytes, r.device_bytes])
