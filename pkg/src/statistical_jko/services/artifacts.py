"""
Artifact writer.

All files of a run go through one ArtifactWriter: writes are serialized by an
asyncio.Lock, floats are printed with 17 significant digits so that reruns
with the same seed are byte-identical, and every file is hashed for the
manifest.
"""

import asyncio
import csv
import hashlib
import io
import json
import logging
import math
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

import aiofiles
import numpy as np

from ..core.exceptions import WgfError
from ..models.manifest import ArtifactFile, ArtifactManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
ERROR_NAME = "error.json"


def format_value(value: Any) -> str:
    """One CSV cell: floats with 17 significant digits, everything else via str."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, datetime):
        return value.isoformat()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def render_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


class ArtifactWriter:
    """Single writer for one output directory."""

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)
        self.files: List[ArtifactFile] = []
        self.lock = asyncio.Lock()

    async def _write(self, name: str, content: str, kind: str, description: str) -> ArtifactFile:
        data = content.encode("utf-8")
        path = self.output_dir / name
        async with self.lock:
            os.makedirs(path.parent, exist_ok=True)
            async with aiofiles.open(path, "wb") as f:
                await f.write(data)
            record = ArtifactFile(
                path=name,
                sha256=hashlib.sha256(data).hexdigest(),
                bytes=len(data),
                kind=kind,
                description=description,
            )
            self.files.append(record)
        logger.debug(f"Wrote {path} ({len(data)} bytes)")
        return record

    async def write_csv(
        self,
        name: str,
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
        description: str = "",
    ) -> ArtifactFile:
        return await self._write(name, render_csv(header, rows), "csv", description)

    async def write_json(self, name: str, payload: Any, description: str = "") -> ArtifactFile:
        return await self._write(name, render_json(payload), "json", description)

    async def write_text(self, name: str, content: str, kind: str = "svg", description: str = "") -> ArtifactFile:
        return await self._write(name, content, kind, description)

    async def write_manifest(self, manifest: ArtifactManifest) -> Path:
        """Write manifest.json; it lists every file written before it."""
        manifest = manifest.model_copy(update={"files": list(self.files)})
        path = self.output_dir / MANIFEST_NAME
        async with self.lock:
            os.makedirs(self.output_dir, exist_ok=True)
            async with aiofiles.open(path, "w") as f:
                await f.write(render_json(manifest.model_dump(mode="json")))
        logger.info(f"Manifest with {len(manifest.files)} files written to {path}")
        return path


def write_error_report(output_dir: Optional[str], error: BaseException) -> Optional[Path]:
    """
    Best-effort error.json for a failed run.

    Returns:
        The report path, or None when the directory is not writable
    """
    if output_dir is None:
        return None
    if isinstance(error, WgfError):
        payload = error.to_dict()
    else:
        payload = {"type": type(error).__name__, "message": str(error), "context": {}}
    path = Path(output_dir) / ERROR_NAME
    try:
        os.makedirs(output_dir, exist_ok=True)
        path.write_text(render_json(payload), encoding="utf-8")
    except OSError as e:
        logger.warning(f"Could not write error report to {path}: {e}")
        return None
    return path
