"""Binary container: one JSON header line plus named float64 sections.

Layout: a UTF-8 JSON object terminated by a newline, followed by the raw
little-endian IEEE-754 float64 bytes of each section in the order listed
in the header.  The header records every section's name, shape and SHA-256
checksum, so truncation and corruption are both detectable and the whole
file round-trips byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = [
    "ContainerError",
    "ChecksumError",
    "VersionError",
    "write_container",
    "read_container",
]


class ContainerError(Exception):
    pass


class ChecksumError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


def _section_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def write_container(
    path: str | Path,
    fmt: str,
    meta: dict,
    sections: list[tuple[str, np.ndarray]],
) -> None:
    entries = []
    blobs = []
    for name, arr in sections:
        arr = np.asarray(arr, dtype=np.float64)
        blob = _section_bytes(arr)
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        )
        blobs.append(blob)
    header = {"format": fmt, "meta": meta, "sections": entries}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    with open(path, "wb") as fh:
        fh.write(head.encode("utf-8"))
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | Path, fmt: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        head_line = fh.readline()
        try:
            header = json.loads(head_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ContainerError(f"unreadable header: {e}") from e
        if header.get("format") != fmt:
            raise VersionError(
                f"expected format {fmt!r}, found {header.get('format')!r}"
            )
        sections: dict[str, np.ndarray] = {}
        for entry in header["sections"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(8 * count)
            if len(blob) != 8 * count:
                raise ContainerError(f"section {entry['name']!r} is truncated")
            if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
                raise ChecksumError(f"checksum mismatch in section {entry['name']!r}")
            sections[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ContainerError("trailing bytes after last section")
    return header["meta"], sections
