"""Pipe routing in an annular layout space with NURBS paths and a PPO agent."""

from .geometry import NurbsPath, Sector, arc_length, cart_to_cyl, cyl_to_cart, sample_by_arclength
from .environment import LayoutSpace, ObstacleOctree, SceneError, build_octree, load_point_cloud
from .potential import Attractive, ExternalComponent, PotentialTable, Repulsive, build_table
from .routing_env import EnvConfig, PathMetrics, RoutingEnv, RoutingTask, evaluate_path
from .learner import TrainConfig, finetune, train
from .qpso import SwarmConfig, optimize
from .scene import Scene, build_scene_table, load_bundled_scene, load_scene

__version__ = "0.1.0"

__all__ = [
    "NurbsPath", "Sector", "arc_length", "cart_to_cyl", "cyl_to_cart", "sample_by_arclength",
    "LayoutSpace", "ObstacleOctree", "SceneError", "build_octree", "load_point_cloud",
    "Attractive", "ExternalComponent", "PotentialTable", "Repulsive", "build_table",
    "EnvConfig", "PathMetrics", "RoutingEnv", "RoutingTask", "evaluate_path",
    "TrainConfig", "finetune", "train", "SwarmConfig", "optimize",
    "Scene", "build_scene_table", "load_bundled_scene", "load_scene",
]
