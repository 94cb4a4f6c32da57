"""Service configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

MODES = ("stub_constant", "stub_gaussian", "diffusion")


@dataclass
class ServiceConfig:
    """What to serve and how to listen.

    stub_constant needs `value`; stub_gaussian needs the full AR parameter
    set; diffusion needs a saved model artifact. `listen` is "stdio" or
    "tcp" (with `port`; port 0 binds an ephemeral one).
    """

    mode: str
    d: int = 1
    min_context: int = 1
    listen: str = "stdio"
    port: int = 0
    value: float | None = None
    transition: list | None = None
    intercept: list | None = None
    noise_scale: list | None = None
    model_path: str | None = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.listen not in ("stdio", "tcp"):
            raise ValueError(f"listen must be 'stdio' or 'tcp', got {self.listen!r}")
        if self.d < 1 or self.min_context < 1:
            raise ValueError("d and min_context must be >= 1")
        if self.mode == "stub_constant" and self.value is None:
            raise ValueError("stub_constant requires a value")
        if self.mode == "stub_gaussian":
            for key in ("transition", "intercept", "noise_scale"):
                if getattr(self, key) is None:
                    raise ValueError(f"stub_gaussian requires {key}")
        if self.mode == "diffusion" and not self.model_path:
            raise ValueError("diffusion mode requires a model_path")
        if not self.name:
            self.name = self.mode


def load_config(path: str | Path) -> ServiceConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ServiceConfig(**doc)
