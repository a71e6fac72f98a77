"""
On-disk artifact helpers shared by the pipeline stages.

JSON is written with sorted keys and a fixed layout so identical inputs give
byte-identical files. Array payloads use numpy .npz archives with explicit
little-endian dtypes and a FORMAT_VERSION entry.
"""

import hashlib
import json
import os
import zipfile
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from errors import DataError, UsageError

FORMAT_VERSION = 1
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def ensure_dir(path: str) -> str:
    Path(path).mkdir(parents=True, exist_ok=True)
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def to_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default, allow_nan=False) + '\n'


def write_json(path: str, payload: Any) -> str:
    """Write payload as deterministic JSON and return the path."""
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    with open(path, 'w', encoding='utf-8') as f:
        f.write(to_json(payload))
    return path


def read_json(path: str) -> Any:
    """
    Read a JSON artifact.

    Raises:
        UsageError: If the file does not exist (a stage was skipped)
        DataError: If the file is not valid JSON
    """
    if not os.path.exists(path):
        raise UsageError(f"Artifact not found: {path} (run the previous stage first)")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Corrupt artifact {path}: {e}")


def save_arrays(path: str, kind: str, header: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> str:
    """
    Save a versioned .npz artifact.

    Args:
        path (str): Output path (.npz)
        kind (str): Artifact kind, checked on load
        header (dict): JSON-serializable metadata
        arrays (dict): Named arrays; floats stored as '<f8', ints as '<i8'
    """
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    payload = {
        '__kind__': np.array(kind),
        '__version__': np.array(FORMAT_VERSION, dtype='<i8'),
        '__header__': np.array(json.dumps(header, sort_keys=True, default=_json_default)),
    }
    for name, array in arrays.items():
        array = np.asarray(array)
        if array.dtype.kind == 'f':
            array = array.astype('<f8')
        elif array.dtype.kind in 'iub':
            array = array.astype('<i8')
        payload[name] = np.ascontiguousarray(array)

    # np.savez stamps entries with the wall clock; a fixed date keeps hashes stable
    with zipfile.ZipFile(path, 'w', compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(payload):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_EPOCH)
            with archive.open(info, 'w', force_zip64=True) as member:
                np.lib.format.write_array(member, payload[name], allow_pickle=False)
    return path


def load_arrays(path: str, kind: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Load an artifact written by save_arrays.

    Returns:
        tuple: (header dict, dict of arrays)

    Raises:
        UsageError: If the file is missing
        DataError: If kind or version do not match
    """
    if not os.path.exists(path):
        raise UsageError(f"Artifact not found: {path} (run the previous stage first)")

    with np.load(path, allow_pickle=False) as archive:
        stored_kind = str(archive['__kind__'])
        version = int(archive['__version__'])
        if stored_kind != kind:
            raise DataError(f"{path}: expected a '{kind}' artifact, found '{stored_kind}'")
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported artifact version {version}")
        header = json.loads(str(archive['__header__']))
        arrays = {name: archive[name] for name in archive.files if not name.startswith('__')}

    return header, arrays


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(settings: Dict[str, Any]) -> str:
    """Stable short hash of a settings dict (recorded inside model artifacts)."""
    text = json.dumps(settings, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]
