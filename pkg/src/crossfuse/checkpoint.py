"""Model checkpoints: a config header followed by named tensor records.

Layout (integers little-endian):

    bytes 0..3   magic b"CFCK"
    byte  4      version, currently 1
    u32          header JSON byte length
    bytes        canonical JSON {"model": <config>, "ablation": <mode>}
    u32          tensor record count
    repeated     u32 name length, utf-8 name, one CFTN tensor record

Records appear in parameter-census order, which is a pure function of the
config, so loading rebuilds the model and verifies every name and shape.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

from .config import (
    ABLATION_MODES,
    FusionModelConfig,
    canonical_json,
    dataclass_from_dict,
    dataclass_to_dict,
)
from .errors import ConfigError, FormatError
from .fusion import FusionModel, build_model
from .tensor_io import read_tensor, write_tensor

MAGIC = b"CFCK"
VERSION = 1


def _read_exact(fh: BinaryIO, n: int, source: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{source}: truncated checkpoint (wanted {n} bytes, got {len(buf)})")
    return buf


def save_checkpoint(path: str | Path, model: FusionModel, ablation: str = "full") -> None:
    """Write the model atomically (temp file, rename on success)."""
    if ablation not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation {ablation!r}")
    path = Path(path)
    header = canonical_json({
        "model": dataclass_to_dict(model.cfg),
        "ablation": ablation,
    }).encode("utf-8")
    params = model.named_parameters()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            write_tensor(fh, tensor.data)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[FusionModel, str]:
    """Rebuild the model from a checkpoint; returns (model, ablation)."""
    path = Path(path)
    source = path.name
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, source) != MAGIC:
            raise FormatError(f"{source}: bad checkpoint magic")
        (version,) = struct.unpack("<B", _read_exact(fh, 1, source))
        if version != VERSION:
            raise FormatError(f"{source}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, source))
        try:
            header = json.loads(_read_exact(fh, header_len, source).decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"{source}: corrupt checkpoint header: {exc}") from exc
        cfg = dataclass_from_dict(FusionModelConfig, header.get("model"), where=source)
        ablation = header.get("ablation", "full")
        if ablation not in ABLATION_MODES:
            raise ConfigError(f"{source}: unknown ablation {ablation!r} in checkpoint")
        model = build_model(cfg, seed=0)
        census = model.named_parameters()
        (count,) = struct.unpack("<I", _read_exact(fh, 4, source))
        if count != len(census):
            raise ConfigError(
                f"{source}: checkpoint holds {count} tensors but the config implies {len(census)}"
            )
        for expected_name, tensor in census:
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, source))
            name = _read_exact(fh, name_len, source).decode("utf-8")
            if name != expected_name:
                raise ConfigError(
                    f"{source}: tensor record {name!r} does not match expected {expected_name!r}"
                )
            arr = read_tensor(fh, source=f"{source}:{name}")
            if arr.shape != tensor.data.shape:
                raise ConfigError(
                    f"{source}: tensor {name!r} has shape {arr.shape}, "
                    f"config implies {tensor.data.shape}"
                )
            tensor.data = arr
        if fh.read(1):
            raise FormatError(f"{source}: trailing bytes after final tensor record")
    return model, ablation
