"""
File tools for Multi-PFA runs.
Atomic writers, path safety and content digests.
"""

import hashlib
import json
import os
import pathlib
import tempfile
from typing import Any

import numpy as np
import pandas as pd

from multipfa.errors import InputOutputError


def safe_output_path(root: pathlib.Path, path: str) -> pathlib.Path:
    """
    Ensure the path is within the run directory to prevent directory traversal.
    """
    root = root.resolve()
    p = (root / path).resolve()

    try:
        p.relative_to(root)
    except ValueError:
        raise InputOutputError(
            f"Attempt to write outside the output directory: {path}"
        ) from None

    return p


def init_output_dir(path: pathlib.Path) -> pathlib.Path:
    """Create the run directory; existing files are left in place and overwritten per file."""
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputOutputError(f"cannot create output directory {path}: {e}") from e
    return path.resolve()


def write_text_atomic(path: pathlib.Path, content: str) -> pathlib.Path:
    """
    Write text via a temporary sibling and rename, so the target is either
    complete or absent.
    """
    path = pathlib.Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(content)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise InputOutputError(f"Failed to write {path}: {e}") from e
    return path


def write_json_atomic(path: pathlib.Path, payload: Any) -> pathlib.Path:
    return write_text_atomic(path, json.dumps(payload, indent=2, default=str) + "\n")


def write_frame_atomic(path: pathlib.Path, frame: pd.DataFrame) -> pathlib.Path:
    return write_text_atomic(path, frame.to_csv(index=False, na_rep=""))


def write_array_atomic(path: pathlib.Path, array: np.ndarray) -> pathlib.Path:
    """Write a matrix as .npy, or as header-less CSV for any other suffix."""
    path = pathlib.Path(path)
    if path.suffix == ".npy":
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as f:
                    np.save(f, array)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as e:
            raise InputOutputError(f"Failed to write {path}: {e}") from e
        return path
    return write_text_atomic(path, pd.DataFrame(array).to_csv(index=False, header=False))


def write_jsonl(path: pathlib.Path, records: list[dict[str, Any]]) -> pathlib.Path:
    """Write diagnostics records as JSON lines (one file, replaced atomically)."""
    lines = "".join(json.dumps(r, default=str) + "\n" for r in records)
    return write_text_atomic(path, lines)


def file_digest(path: pathlib.Path) -> str:
    """sha256 of a file's contents."""
    h = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    except OSError as e:
        raise InputOutputError(f"Failed to read {path}: {e}") from e
    return f"sha256:{h.hexdigest()}"
