"""Checkpoint container: JSON manifest plus raw tensor payloads.

Layout: an 8-byte magic, a little-endian uint32 manifest byte length,
the UTF-8 JSON manifest (format version, model config, context and
token vocabularies, tensor directory), then every tensor's raw
little-endian row-major bytes at the offsets the directory states.

Loading validates the whole file before constructing anything, so a
corrupt or truncated file never yields a partially loaded model. When
the requested config has parameter names the file lacks (for example
loading a vanilla checkpoint into a qacg config), those names are
freshly initialized and reported; file-only names are reported and
ignored. Saving is atomic: write to a temp file, then rename.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .context import ContextVocab
from .data import Vocab
from .errors import CheckpointError, FormatError
from .model import Model, ModelConfig, init_model, parameter_shapes

MAGIC = b"CTXATTN\x01"
FORMAT_VERSION = 1

_DTYPE_CODES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(model: Model, path, extras: dict | None = None) -> None:
    """Write the model to ``path`` atomically.

    ``extras`` is an optional JSON-serializable dict stored verbatim in
    the manifest (the CLI keeps the task preset and input-mode flags
    there); loading returns it in the report under ``"extras"``.
    """
    entries = []
    blobs = []
    offset = 0
    for name, p in model.params.items():
        dtype = str(p.data.dtype)
        if dtype not in _DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {dtype}")
        blob = np.ascontiguousarray(p.data).astype(_DTYPE_CODES[dtype]).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(p.data.shape),
                "offset": offset,
                "length": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "context_vocab": (
            model.context_vocab.to_dict() if model.context_vocab else None
        ),
        "token_vocab": model.token_vocab.to_dict() if model.token_vocab else None,
        "extras": extras,
        "tensors": entries,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def _read_manifest(raw: bytes) -> tuple[dict, bytes]:
    if len(raw) < len(MAGIC) + 4:
        raise FormatError("file too short to be a checkpoint")
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic: not a checkpoint file")
    (mlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if start + mlen > len(raw):
        raise FormatError("manifest length exceeds file size")
    try:
        manifest = json.loads(raw[start : start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"manifest is not valid JSON: {e}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format version {manifest.get('format_version')!r}"
        )
    return manifest, raw[start + mlen :]


def _validate_entries(manifest: dict, payload: bytes) -> dict[str, dict]:
    by_name: dict[str, dict] = {}
    for entry in manifest.get("tensors", []):
        for key in ("name", "dtype", "shape", "offset", "length"):
            if key not in entry:
                raise FormatError(f"tensor entry missing field {key!r}")
        name = entry["name"]
        if name in by_name:
            raise FormatError(f"duplicate tensor entry {name!r}")
        if entry["dtype"] not in _DTYPE_CODES:
            raise FormatError(f"tensor {name!r}: unknown dtype {entry['dtype']!r}")
        itemsize = np.dtype(_DTYPE_CODES[entry["dtype"]]).itemsize
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * itemsize
        if entry["length"] != expected:
            raise FormatError(
                f"tensor {name!r}: payload length {entry['length']} does not "
                f"match shape {entry['shape']} ({expected} bytes expected)"
            )
        if entry["offset"] < 0 or entry["offset"] + entry["length"] > len(payload):
            raise FormatError(f"tensor {name!r}: payload out of file bounds")
        by_name[name] = entry
    return by_name


def load_checkpoint(path, config: ModelConfig | None = None) -> tuple[Model, dict]:
    """Load a checkpoint, optionally adapting it to a different config.

    Returns ``(model, report)`` where report lists tensor names that
    were ``loaded`` from the file, freshly ``initialized`` because the
    model needs them and the file lacks them, and ``ignored`` because
    only the file has them. With ``config=None`` the file's own stored
    config is used, which makes every name a ``loaded`` name.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    manifest, payload = _read_manifest(raw)
    entries = _validate_entries(manifest, payload)

    target_config = config or ModelConfig.from_dict(manifest["config"])
    shapes = parameter_shapes(target_config)

    shared = sorted(set(shapes) & set(entries))
    for name in shared:
        if tuple(entries[name]["shape"]) != shapes[name]:
            raise CheckpointError(
                f"tensor {name!r}: checkpoint shape "
                f"{tuple(entries[name]['shape'])} does not match model shape "
                f"{shapes[name]}"
            )

    params = init_model(target_config)
    for name in shared:
        entry = entries[name]
        arr = np.frombuffer(
            payload, dtype=_DTYPE_CODES[entry["dtype"]],
            count=int(np.prod(entry["shape"], dtype=np.int64)),
            offset=entry["offset"],
        ).reshape(entry["shape"])
        params[name].data = np.ascontiguousarray(
            arr.astype(target_config.np_dtype)
        )

    context_vocab = (
        ContextVocab.from_dict(manifest["context_vocab"])
        if manifest.get("context_vocab")
        else None
    )
    token_vocab = (
        Vocab.from_dict(manifest["token_vocab"])
        if manifest.get("token_vocab")
        else None
    )
    report = {
        "loaded": shared,
        "initialized": sorted(set(shapes) - set(entries)),
        "ignored": sorted(set(entries) - set(shapes)),
        "extras": manifest.get("extras"),
    }
    return Model(target_config, params, context_vocab, token_vocab), report
