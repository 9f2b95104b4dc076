"""Experiment configuration: which scenes, goals and seeds, and how the system runs.

Config files are JSON with the same shape as :meth:`RunConfig.to_dict`; keys
that are left out keep their defaults. Command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .episode import ConfigError, SystemConfig, choose_start
from .scene import Scene, SceneConfig, generate_scene


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = SceneConfig()
    scene_file: str | None = None
    seeds: tuple[int, ...] = (0,)
    goals: tuple[str, ...] = ()
    system: SystemConfig = SystemConfig()
    explore_only: bool = False
    budget_fractions: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    budgets: tuple[int, ...] = ()
    out_dir: str = "out"
    jobs: int = 1

    def validate(self) -> None:
        self.system.validate()
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if any(f <= 0 for f in self.budget_fractions) or any(b <= 0 for b in self.budgets):
            raise ConfigError("budgets must be positive")

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "scene_file": self.scene_file,
            "seeds": list(self.seeds),
            "goals": list(self.goals),
            "system": self.system.to_dict(),
            "explore_only": self.explore_only,
            "budget_fractions": list(self.budget_fractions),
            "budgets": list(self.budgets),
            "out_dir": self.out_dir,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        try:
            if isinstance(data.get("scene"), dict):
                data["scene"] = SceneConfig.from_dict(data["scene"])
            if isinstance(data.get("system"), dict):
                data["system"] = SystemConfig.from_dict(data["system"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        for key in ("seeds", "goals", "budget_fractions", "budgets"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- episodes -----------------------------------------------------------

    def scene_for(self, seed: int) -> Scene:
        if self.scene_file:
            return Scene.load(self.scene_file)
        return generate_scene(seed, self.scene)

    def goal_for(self, seed: int, scene: Scene) -> str:
        goals = self.goals or tuple(scene.config.get("goals", ())) or self.scene.goals
        if not goals:
            raise ConfigError("no goal categories configured")
        return goals[seed % len(goals)]

    def episode_for(self, seed: int) -> tuple[Scene, str, tuple[int, int]]:
        scene = self.scene_for(seed)
        return scene, self.goal_for(seed, scene), choose_start(scene, seed)


@functools.lru_cache(maxsize=1)
def build_id() -> str:
    """``git describe``-style identifier of the running code."""
    root = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=root,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"navmem-{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"navmem-{__version__}"
