"""Multi-agent scenarios: models, construction, rendering and placement checks."""

from trustpoison.scene.models import Agent, Role, Scene, SceneObject, Surface, ViewSet

__all__ = ["Agent", "Role", "Scene", "SceneObject", "Surface", "ViewSet"]
