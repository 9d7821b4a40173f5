"""
Flat binary tensor archive: ``tensors.bin`` holds every array back to back,
``manifest.json`` lists name, dtype, shape, offset and size of each one plus
free-form metadata. See docs/archive.rst.
"""

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from carl.exceptions import CheckpointError

FORMAT_NAME = "carl-archive"
FORMAT_VERSION = 1
DATA_FILE = "tensors.bin"
MANIFEST_FILE = "manifest.json"
ALIGNMENT = 8

logger = logging.getLogger(__name__)


def _little_endian(array):
    array = np.ascontiguousarray(array)
    if array.dtype.byteorder == ">":
        array = array.astype(array.dtype.newbyteorder("<"))
    return array


def save_archive(directory, tensors, meta=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    entries = []
    digest = hashlib.sha256()
    offset = 0
    tmp_data = directory / (DATA_FILE + ".tmp")
    with open(tmp_data, "wb") as f:
        for name in sorted(tensors):
            array = _little_endian(np.asarray(tensors[name]))
            padding = (-offset) % ALIGNMENT
            if padding:
                f.write(b"\0" * padding)
                digest.update(b"\0" * padding)
                offset += padding
            data = array.tobytes()
            f.write(data)
            digest.update(data)
            entries.append(
                {
                    "name": name,
                    "dtype": array.dtype.str,
                    "shape": list(array.shape),
                    "offset": offset,
                    "nbytes": len(data),
                }
            )
            offset += len(data)

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "sha256": digest.hexdigest(),
        "size": offset,
        "tensors": entries,
        "meta": meta or {},
    }
    tmp_manifest = directory / (MANIFEST_FILE + ".tmp")
    tmp_manifest.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    # data first, so a readable manifest always describes a complete data file
    os.replace(tmp_data, directory / DATA_FILE)
    os.replace(tmp_manifest, directory / MANIFEST_FILE)
    logger.debug("wrote %s tensors (%s bytes) to %s", len(entries), offset, directory)
    return directory


def read_manifest(directory):
    path = Path(directory) / MANIFEST_FILE
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"no archive manifest at {path}")
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt archive manifest {path}: {exc}")
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path} is not a {FORMAT_NAME} v{FORMAT_VERSION} manifest")
    return manifest


def load_archive(directory):
    """
    Returns ``(tensors, meta)``; raises CheckpointError when the archive is
    missing, truncated or fails its checksum.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    try:
        data = (directory / DATA_FILE).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"no archive data at {directory / DATA_FILE}")
    if len(data) != manifest["size"] or hashlib.sha256(data).hexdigest() != manifest["sha256"]:
        raise CheckpointError(f"archive data in {directory} does not match its manifest")

    tensors = {}
    for entry in manifest["tensors"]:
        dtype = np.dtype(entry["dtype"])
        if entry["nbytes"] == 0:
            tensors[entry["name"]] = np.empty(entry["shape"], dtype=dtype)
            continue
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        array = np.frombuffer(data[start:stop], dtype=dtype)
        tensors[entry["name"]] = array.reshape(entry["shape"]).copy()
    return tensors, manifest["meta"]
