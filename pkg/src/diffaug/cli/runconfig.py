"""Run-configuration manager for the CLI: config file loading, merging and snapshots."""

import os
from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from pydantic import ValidationError
from rich.console import Console

from diffaug.config import RunConfig
from diffaug.exceptions import ConfigError

console = Console()

SNAPSHOT_NAME = "resolved_config.env"


class RunConfigManager:
    """Resolves one RunConfig per CLI run and records it for replay."""

    def __init__(self, config_path: str | None = None):
        """
        Initialize the manager.

        Args:
            config_path: Path to a ``key = value`` config file. Falls back to
                the DIFFAUG_CONFIG environment variable when not provided.
        """
        self.config_path = self._resolve_config_path(config_path)
        self.file_values: dict[str, str] = {}

    def _resolve_config_path(self, path: str | None) -> Path | None:
        """
        Resolve the config file path.

        Priority:
        1. Provided path argument
        2. DIFFAUG_CONFIG environment variable
        3. No config file

        Args:
            path: Optional path string

        Returns:
            Resolved Path, or None when no file is configured
        """
        if path:
            return Path(path).expanduser().resolve()
        if env_path := os.getenv("DIFFAUG_CONFIG"):
            return Path(env_path).expanduser().resolve()
        return None

    def load_file(self) -> dict[str, str]:
        """
        Load the config file if one is configured.

        Keys may be written as field names (``steps``) or with the
        environment prefix (``DIFFAUG_STEPS``).

        Returns:
            Lower-cased key to raw string value mapping

        Raises:
            ConfigError: If a configured file does not exist.
        """
        if self.config_path is None:
            self.file_values = {}
            return self.file_values
        if not self.config_path.exists():
            raise ConfigError(f"config file not found: {self.config_path}")

        values: dict[str, str] = {}
        for key, value in dotenv_values(self.config_path).items():
            name = key.lower().removeprefix("diffaug_")
            if value is not None:
                values[name] = value
        console.print(f"[green]✓[/green] Loaded config from {self.config_path}")
        self.file_values = values
        return values

    def resolve(self, overrides: dict[str, Any]) -> RunConfig:
        """
        Merge flags over the config file over DIFFAUG_ environment over defaults.

        Args:
            overrides: Flag values; None entries are ignored

        Returns:
            The validated RunConfig

        Raises:
            ConfigError: On unknown keys or invalid values.
        """
        merged: dict[str, Any] = dict(self.load_file())
        merged.update({key: value for key, value in overrides.items() if value is not None})
        try:
            return RunConfig(**merged)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"invalid configuration: {problems}") from e

    @staticmethod
    def save_snapshot(settings: RunConfig) -> Path:
        """
        Write every resolved setting to ``<out>/resolved_config.env``.

        The file can be passed back through ``--config`` to replay the run.

        Returns:
            Path of the snapshot
        """
        settings.out.mkdir(parents=True, exist_ok=True)
        path = settings.out / SNAPSHOT_NAME
        lines = []
        for name, value in settings.model_dump(mode="json").items():
            if isinstance(value, list):
                value = ",".join(str(item) for item in value)
            lines.append(f"{name} = {value}")
        path.write_text("\n".join(lines) + "\n")
        return path
