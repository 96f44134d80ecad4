"""FastAPI service surface: teleoperation sessions and planning/inspection."""

from .app import create_app  # noqa: F401
