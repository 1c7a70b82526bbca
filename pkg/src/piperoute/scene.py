"""Scene files: layout space, rule-carrying components and routing tasks.

A scene is a JSON document with ``"schema": "piperoute-scene/1"``.  Cloud
paths are resolved relative to the scene file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .environment import LayoutSpace, ObstacleOctree, SceneError, build_octree, load_point_cloud
from .potential import Attractive, ExternalComponent, PotentialTable, Repulsive, build_table
from .routing_env import RoutingTask, TaskError, init_episode

SCENE_SCHEMA = "piperoute-scene/1"


@dataclass(frozen=True)
class FieldRule:
    repulsive: Optional[Repulsive] = None
    attractive: Optional[Attractive] = None

    def to_dict(self) -> dict:
        out = {}
        if self.repulsive is not None:
            out["repulsive"] = {"k_r": self.repulsive.k_r, "clearance": self.repulsive.clearance}
        if self.attractive is not None:
            a = self.attractive
            out["attractive"] = {"k_a": a.k_a, "d_min": a.d_min, "d_max_band": a.d_max_band}
        return out


@dataclass(frozen=True)
class ObstacleSpec:
    name: str
    cloud: Path
    octree_depth: int
    rule: FieldRule
    points: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def load(self) -> np.ndarray:
        return self.points if self.points is not None else load_point_cloud(self.cloud)


@dataclass(frozen=True)
class Scene:
    name: str
    space: LayoutSpace
    cell_size: float
    casing: Optional[FieldRule]
    nacelle: Optional[FieldRule]
    obstacles: tuple[ObstacleSpec, ...]
    tasks: tuple[RoutingTask, ...]
    base_dir: Path = Path(".")

    def task(self, key: str | int) -> RoutingTask:
        """Task by name or zero-based index."""
        for t in self.tasks:
            if t.name == str(key):
                return t
        try:
            return self.tasks[int(key)]
        except (ValueError, IndexError):
            names = ", ".join(t.name or str(i) for i, t in enumerate(self.tasks))
            raise SceneError(f"unknown task {key!r}; scene has: {names}") from None

    def with_obstacle(self, spec: ObstacleSpec) -> "Scene":
        return replace(self, obstacles=self.obstacles + (spec,))

    def to_dict(self) -> dict:
        sp = self.space
        surfaces = {}
        if self.casing is not None:
            surfaces["casing"] = self.casing.to_dict()
        if self.nacelle is not None:
            surfaces["nacelle"] = self.nacelle.to_dict()
        return {
            "schema": SCENE_SCHEMA,
            "name": self.name,
            "layout_space": {
                "casing_coeffs": list(sp.casing_coeffs),
                "nacelle_coeffs": list(sp.nacelle_coeffs),
                "z_min": sp.z_min,
                "z_max": sp.z_max,
            },
            "cell_size": self.cell_size,
            "surfaces": surfaces,
            "obstacles": [
                {"name": o.name, "cloud": str(o.cloud), "octree_depth": o.octree_depth, **o.rule.to_dict()}
                for o in self.obstacles
            ],
            "tasks": [t.to_dict() for t in self.tasks],
        }


def _rule(doc: dict, where: str) -> FieldRule:
    try:
        rep = Repulsive(**doc["repulsive"]) if doc.get("repulsive") is not None else None
        att = Attractive(**doc["attractive"]) if doc.get("attractive") is not None else None
    except (TypeError, ValueError) as exc:
        raise SceneError(f"{where}: {exc}") from None
    return FieldRule(rep, att)


def scene_from_dict(doc: dict, base_dir: Path = Path(".")) -> Scene:
    if doc.get("schema") != SCENE_SCHEMA:
        raise SceneError(f"unsupported scene schema {doc.get('schema')!r}; expected {SCENE_SCHEMA!r}")
    try:
        ls = doc["layout_space"]
        space = LayoutSpace(tuple(ls["casing_coeffs"]), tuple(ls["nacelle_coeffs"]), float(ls["z_min"]), float(ls["z_max"]))
        s = float(doc["cell_size"])
    except KeyError as exc:
        raise SceneError(f"scene is missing field {exc}") from None
    if not s > 0:
        raise SceneError(f"cell_size must be positive, got {s}")
    surf = doc.get("surfaces", {})
    casing = _rule(surf["casing"], "surfaces.casing") if "casing" in surf else None
    nacelle = _rule(surf["nacelle"], "surfaces.nacelle") if "nacelle" in surf else None
    obstacles = []
    for i, o in enumerate(doc.get("obstacles", [])):
        cloud = (base_dir / o["cloud"]).resolve()
        if not cloud.is_file():
            raise SceneError(f"obstacle {o.get('name', i)}: cloud file not found: {cloud}")
        depth = int(o.get("octree_depth", 5))
        if depth < 0:
            raise SceneError(f"obstacle {o.get('name', i)}: octree_depth must be >= 0")
        obstacles.append(ObstacleSpec(o.get("name", f"obstacle{i}"), cloud, depth, _rule(o, f"obstacles[{i}]")))
    tasks = []
    for i, t in enumerate(doc.get("tasks", [])):
        try:
            task = RoutingTask.from_dict(t)
            init_episode(task, space)
        except (KeyError, TaskError) as exc:
            raise SceneError(f"tasks[{i}]: {exc}") from None
        tasks.append(task)
    return Scene(doc.get("name", ""), space, s, casing, nacelle, tuple(obstacles), tuple(tasks), base_dir)


def load_scene(path) -> Scene:
    path = Path(path)
    if not path.is_file():
        raise SceneError(f"scene file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON ({exc})") from None
    return scene_from_dict(doc, path.parent.resolve())


def bundled_scene_path(name: str = "annulus_world") -> Path:
    return Path(str(resources.files("piperoute") / "scenes" / f"{name}.json"))


def load_bundled_scene(name: str = "annulus_world") -> Scene:
    return load_scene(bundled_scene_path(name))


def build_obstacle(spec: ObstacleSpec, cell_size: float = 1.0) -> ObstacleOctree:
    """Flat clouds are thickened to one table cell before subdivision."""
    return build_octree(spec.load(), spec.octree_depth, min_extent=cell_size)


def build_components(scene: Scene) -> list[ExternalComponent]:
    ecs = []
    for spec in scene.obstacles:
        r = spec.rule
        ecs.append(ExternalComponent("obstacle", build_obstacle(spec, scene.cell_size), r.repulsive, r.attractive, spec.name))
    if scene.casing is not None:
        ecs.append(ExternalComponent("casing", scene.space, scene.casing.repulsive, scene.casing.attractive, "casing"))
    if scene.nacelle is not None:
        ecs.append(ExternalComponent("nacelle", scene.space, scene.nacelle.repulsive, scene.nacelle.attractive, "nacelle"))
    return ecs


def build_scene_table(scene: Scene) -> PotentialTable:
    return build_table(scene.space, build_components(scene), scene.cell_size)
