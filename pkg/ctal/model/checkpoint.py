"""
Binary checkpoint format:

    magic "CTALCKPT" | version u16 | config block length u32 | config block
    (key=value lines, UTF-8) | tensor count u32 | per tensor: name length u32,
    name (UTF-8), rank u32, dims u32 x rank, little-endian float32 payload.

All integers are little-endian. Writing what was read reproduces the file
byte for byte. Embedding dumps reuse the format with one vector per example.
"""
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ctal.errors import CheckpointError, FormatError
from ctal.model.config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"CTALCKPT"
VERSION = 1
META_PREFIX = "meta."


class _Reader:
    def __init__(self, blob, source):
        self.blob = blob
        self.offset = 0
        self.source = source

    def take(self, size):
        if self.offset + size > len(self.blob):
            raise FormatError(f"{self.source}: truncated at byte {self.offset}")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


@dataclass
class Checkpoint:
    items: OrderedDict = field(default_factory=OrderedDict)
    tensors: OrderedDict = field(default_factory=OrderedDict)

    @classmethod
    def from_model(cls, model, **metadata):
        items = OrderedDict((key, _format(value)) for key, value in model.config.to_items())
        for key, value in metadata.items():
            items[META_PREFIX + key] = _format(value)
        return cls(items, model.state_dict())

    @property
    def metadata(self):
        return {k[len(META_PREFIX):]: v for k, v in self.items.items() if k.startswith(META_PREFIX)}

    def model_config(self):
        return ModelConfig.from_items((k, v) for k, v in self.items.items() if not k.startswith(META_PREFIX))


def _format(value):
    return repr(value) if isinstance(value, float) else str(value)


def dumps_checkpoint(checkpoint):
    config_block = "".join(f"{key}={value}\n" for key, value in checkpoint.items.items()).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(config_block)), config_block,
             struct.pack("<I", len(checkpoint.tensors))]
    for name, array in checkpoint.tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(array, dtype="<f4")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


def loads_checkpoint(blob, source="checkpoint"):
    reader = _Reader(blob, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{source}: not a CTAL checkpoint (bad magic)")
    version, config_length = reader.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    items = OrderedDict()
    for line in reader.take(config_length).decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{source}: malformed config line {line!r}")
        items[key] = value
    (count,) = reader.unpack("<I")
    tensors = OrderedDict()
    for _ in range(count):
        (name_length,) = reader.unpack("<I")
        name = reader.take(name_length).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if reader.offset != len(blob):
        raise FormatError(f"{source}: {len(blob) - reader.offset} trailing bytes")
    return Checkpoint(items, tensors)


def save_checkpoint(path, checkpoint):
    with open(path, "wb") as f:
        f.write(dumps_checkpoint(checkpoint))
    logger.debug("Wrote %d tensors to %s", len(checkpoint.tensors), path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        return loads_checkpoint(f.read(), source=path)


def load_pretrained(model, tensors, allow_missing=(), allow_unexpected=()):
    """
    Copies same-named tensors into `model`. Names missing from the
    checkpoint must start with a prefix in `allow_missing`; names the model
    lacks must start with a prefix in `allow_unexpected`.

    :return: (missing, unexpected) name lists
    """
    own = OrderedDict(model.named_parameters())
    missing = [name for name in own if name not in tensors]
    unexpected = [name for name in tensors if name not in own]
    bad_missing = [n for n in missing if not n.startswith(tuple(allow_missing))]
    bad_unexpected = [n for n in unexpected if not n.startswith(tuple(allow_unexpected))]
    if bad_missing or bad_unexpected:
        raise CheckpointError(f"unmatched parameters: missing {bad_missing[:5]}"
                              f"{'...' if len(bad_missing) > 5 else ''}, unexpected {bad_unexpected[:5]}"
                              f"{'...' if len(bad_unexpected) > 5 else ''}")
    for name, param in own.items():
        if name not in tensors:
            continue
        array = tensors[name]
        if tuple(array.shape) != param.shape:
            raise CheckpointError(f"{name}: checkpoint shape {tuple(array.shape)} != model shape {param.shape}")
        param.data = np.array(array, dtype=param.dtype)
    logger.info("Loaded %d tensors (%d missing, %d unexpected by allowlist)", len(own) - len(missing),
                len(missing), len(unexpected))
    return missing, unexpected
