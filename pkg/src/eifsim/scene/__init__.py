from . import taxonomy
from .generate import GenerationError, SIZE_CLASSES, check_scene, generate_scene
from .model import (
    INTERACTIONS, ActionPrimitive, ObjectInstance, PreconditionViolated, Room, Scene,
    apply_effect, goal_conditions_met, goal_satisfied, replay_actions,
)

__all__ = [
    "taxonomy", "GenerationError", "SIZE_CLASSES", "check_scene", "generate_scene",
    "INTERACTIONS", "ActionPrimitive", "ObjectInstance", "PreconditionViolated", "Room", "Scene",
    "apply_effect", "goal_conditions_met", "goal_satisfied", "replay_actions",
]
