"""Run manifests: what was run, how long each stage took, what was written."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

__all__ = ["RunManifest", "blob_hash", "file_entry", "utc_now"]


def blob_hash(data: bytes | str) -> str:
    """Git-style blob hash, ``sha1(b"blob <len>\\0" + data)``."""
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_entry(path: Path, root: Path) -> dict:
    data = path.read_bytes()
    return {"path": path.relative_to(root).as_posix(), "size": len(data), "sha256": hashlib.sha256(data).hexdigest()}


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: str
    config_hash: str
    started: str
    finished: str = ""
    status: str = "running"
    wall_time: dict[str, float] = field(default_factory=dict)
    files: list[dict] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @classmethod
    def begin(cls, command: str, config_text: str) -> "RunManifest":
        return cls(command=command, config=config_text, config_hash=blob_hash(config_text), started=utc_now())

    def finish(self, out_dir: str | Path, status: str, name: str = "manifest.json") -> Path:
        """Inventory every file under ``out_dir`` and write the manifest there."""
        root = Path(out_dir)
        target = root / name
        self.status = status
        self.finished = utc_now()
        self.files = [file_entry(p, root) for p in sorted(root.rglob("*")) if p.is_file() and p != target]
        target.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n")
        return target

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))
