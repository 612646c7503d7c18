"""Run manifests: enough to re-run a command and get the same bytes out."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__, kernels

MANIFEST_NAME = "run_manifest.json"


@dataclass
class RunManifest:
    command: str
    flags: dict
    seed: int | None
    out_dir: str
    version: str = field(default_factory=lambda: f"promptevo {__version__} ({kernels.BACKEND} kernels)")
    started: float = field(default_factory=time.time)
    finished: float | None = None
    status: str = "running"

    @property
    def path(self) -> Path:
        return Path(self.out_dir) / MANIFEST_NAME

    def write(self) -> None:
        Path(self.out_dir).mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    def finalize(self, status: str) -> None:
        self.finished = time.time()
        self.status = status
        self.write()

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(**data)
