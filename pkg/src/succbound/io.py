"""CSV output with fixed formatting and the JSONL run manifest."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["format_value", "write_csv", "sha256_file", "RunManifest", "append_manifest", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.jsonl"


def format_value(v) -> str:
    """17 significant digits for reals; strings pass through."""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Comma-separated, ``\\n`` line endings, header row first."""
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    wall_time_s: float
    files: dict = field(default_factory=dict)  # file name -> sha256
    created_unix: float = field(default_factory=time.time)


def append_manifest(out_dir, command: str, config_hash: str, version: str, wall_time_s: float,
                    files: Sequence) -> RunManifest:
    """Checksum ``files`` and append one manifest line; call only after every output exists."""
    out_dir = Path(out_dir)
    sums = {Path(f).name: sha256_file(f) for f in files}
    man = RunManifest(command, config_hash, version, float(wall_time_s), sums)
    with open(out_dir / MANIFEST_NAME, "a", newline="\n", encoding="utf-8") as fh:
        fh.write(json.dumps(asdict(man), sort_keys=True) + "\n")
    return man
