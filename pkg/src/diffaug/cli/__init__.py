"""CLI module for diffaug."""

from diffaug.cli.main import app
from diffaug.cli.runconfig import RunConfigManager

__all__ = ["RunConfigManager", "app"]
