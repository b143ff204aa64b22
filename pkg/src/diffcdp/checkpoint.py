"""Checkpoint container shared by the denoiser and the codec.

A checkpoint is a zip archive holding ``metadata.json`` and one ``.npy``
member per parameter tensor under ``params/``. Member timestamps are
fixed so identical models produce identical bytes.
"""

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointFormatError

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_member(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_archive(path, kind, metadata, state_dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(metadata, format_version=FORMAT_VERSION, kind=kind,
                params=sorted(state_dict))
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "metadata.json", json.dumps(meta, indent=2, sort_keys=True))
        for name in sorted(state_dict):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, state_dict[name].detach().cpu().numpy(), allow_pickle=False)
            _write_member(zf, f"params/{name}.npy", buf.getvalue())
    return path


def load_archive(path, kind):
    """Return ``(metadata, state_dict)``; reject foreign kinds and versions."""
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError, IsADirectoryError) as exc:
        raise CheckpointFormatError(f"{path}: not a checkpoint archive ({exc})") from exc
    with zf:
        try:
            meta = json.loads(zf.read("metadata.json"))
        except KeyError as exc:
            raise CheckpointFormatError(f"{path}: missing metadata.json") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"{path}: checkpoint format {meta.get('format_version')!r}, expected {FORMAT_VERSION}")
        if meta.get("kind") != kind:
            raise CheckpointFormatError(f"{path}: checkpoint kind {meta.get('kind')!r}, expected {kind!r}")
        state = {}
        for name in meta["params"]:
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"params/{name}.npy")), allow_pickle=False)
            state[name] = torch.from_numpy(arr.copy())
    return meta, state
