"""Run manifests: what ran, with which config, on which inputs, producing which files."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def path_digests(paths):
    """sha256 of every file, expanding directories (sorted, recursive)."""
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file() and q.name != MANIFEST_NAME):
                out[str(f)] = file_digest(f)
        elif p.is_file():
            out[str(p)] = file_digest(p)
    return out


def code_version():
    """Package version plus a digest over the package sources."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for f in sorted(root.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    code_version: str = field(default_factory=code_version)
    extra: dict = field(default_factory=dict)

    def record_outputs(self, paths):
        self.outputs = path_digests(paths)

    def write(self, out_dir):
        path = Path(out_dir) / MANIFEST_NAME
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
        return path

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))
