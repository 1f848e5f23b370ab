"""Run manifests: enough provenance to rerun a command exactly.

Every CLI run writes one manifest next to its outputs: the command, the full
config snapshot, seeds, tool version, sha256 digests of file inputs, and wall
times. Wall times are provenance, never part of determinism comparisons.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ropelab import __version__


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seeds: list[int]
    version: str = __version__
    input_digests: dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""

    def start(self) -> "RunManifest":
        self.started_at = datetime.now(timezone.utc).isoformat()
        return self

    def finish(self) -> "RunManifest":
        self.finished_at = datetime.now(timezone.utc).isoformat()
        return self

    def add_input(self, path: str | Path) -> None:
        self.input_digests[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "argv": list(self.argv),
            "config": self.config,
            "seeds": list(self.seeds),
            "version": self.version,
            "input_digests": dict(sorted(self.input_digests.items())),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


def write_manifest(path: str | Path, manifest: RunManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
