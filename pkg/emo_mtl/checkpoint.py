"""
Binary checkpoints of a :class:`~emo_mtl.multitask.MultitaskModel`.

Layout, all integers little-endian::

    b"MTLCKPT1"
    u32   tensor count
    per tensor:
        u16   name length
        bytes UTF-8 name ("encoder.<param>" or "head.<task>.W|b")
        u8    rank
        u64   dims[rank]
        f32   values[prod(dims)], C order

The encoder configuration, task registry and vocabulary go to a JSON sidecar
``<path>.json`` so a checkpoint can be rebuilt into a working model.
"""
import json
import logging
import math
import os
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderState, parameter_shapes
from .errors import CorruptCheckpointError
from .multitask import MultitaskModel, TaskHead, TaskSpec
from .optim import AdamState
from .tensor import Tensor
from .text_pipeline import Vocabulary

logger = logging.getLogger(__name__)

MAGIC = b"MTLCKPT1"
FORMAT_VERSION = 1


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def record_size(name, shape):
    "Bytes taken by one tensor record."
    values = int(np.prod(shape, dtype=np.int64))
    return 2 + len(name.encode("utf-8")) + 1 + 8 * len(shape) + 4 * values


def checkpoint_size(named_shapes):
    "Bytes of a checkpoint holding ``(name, shape)`` pairs."
    return len(MAGIC) + 4 + sum(record_size(name, shape) for name, shape in named_shapes)


def encode_tensors(named_arrays):
    "Serialise an ordered ``{name: array}`` mapping to checkpoint bytes."
    chunks = [MAGIC, struct.pack("<I", len(named_arrays))]
    for name, array in named_arrays.items():
        raw_name = name.encode("utf-8")
        array = np.ascontiguousarray(array, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buffer):
        self.buffer = buffer
        self.offset = 0

    def take(self, count, record):
        end = self.offset + count
        if end > len(self.buffer):
            raise CorruptCheckpointError(
                f"truncated checkpoint: needed {count} bytes at offset {self.offset}, "
                f"{len(self.buffer) - self.offset} left",
                record,
            )
        chunk = self.buffer[self.offset: end]
        self.offset = end
        return chunk

    def unpack(self, fmt, record):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), record))


def decode_tensors(buffer):
    """
    Parse checkpoint bytes into an ordered ``{name: float32 array}`` mapping.

    Raises
    ------
    CorruptCheckpointError
        On a bad magic, a truncated record, undecodable names, duplicates or
        trailing bytes. ``record`` names the first offending record.
    """
    reader = _Reader(memoryview(buffer))
    if bytes(reader.take(len(MAGIC), "header")) != MAGIC:
        raise CorruptCheckpointError("bad magic, not an emo-mtl checkpoint", "header")
    (count,) = reader.unpack("<I", "header")
    tensors = {}
    for index in range(count):
        record = f"#{index}"
        (name_length,) = reader.unpack("<H", record)
        try:
            name = bytes(reader.take(name_length, record)).decode("utf-8")
        except UnicodeDecodeError as err:
            raise CorruptCheckpointError(f"undecodable tensor name: {err}", record) from None
        (rank,) = reader.unpack("<B", name)
        dims = reader.unpack(f"<{rank}Q", name)
        # Python ints: a corrupt dim must not wrap around.
        size = math.prod(dims)
        values = np.frombuffer(reader.take(4 * size, name), dtype="<f4")
        if name in tensors:
            raise CorruptCheckpointError("duplicate tensor name", name)
        tensors[name] = values.reshape(dims).astype(np.float32)
    if reader.offset != len(reader.buffer):
        raise CorruptCheckpointError(
            f"{len(reader.buffer) - reader.offset} trailing bytes after {count} records",
            "trailer",
        )
    return tensors


def model_metadata(model):
    return {
        "format_version": FORMAT_VERSION,
        "encoder": model.encoder.config.to_dict(),
        "lr": model.optimizer.lr,
        "encoder_frozen": model.encoder_frozen,
        "tasks": [
            {
                "name": spec.name,
                "label_names": list(spec.label_names),
                "role": spec.role,
                "text_column": spec.text_column,
                "label_column": spec.label_column,
            }
            for spec in model.tasks.values()
        ],
        "vocabulary": model.vocab.words() if model.vocab is not None else None,
    }


def _write_atomic(path, payload, mode):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, mode, **({} if "b" in mode else {"encoding": "utf-8"})) as file:
        file.write(payload)
    os.replace(tmp, path)


def save_checkpoint(model, path):
    """
    Write ``model`` to ``path`` plus its ``<path>.json`` sidecar.

    Both files are written to temporary names first and moved into place, so
    an interrupted save never leaves a half-written checkpoint behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: tensor.data for name, tensor in model.named_parameters().items()}
    _write_atomic(path, encode_tensors(arrays), "wb")
    _write_atomic(sidecar_path(path), json.dumps(model_metadata(model), indent=2), "w")
    logger.info("saved checkpoint %s (%d tensors)", path, len(arrays))
    return path


def _expected_shapes(config, tasks):
    shapes = {f"encoder.{name}": shape for name, shape in parameter_shapes(config)}
    for spec in tasks:
        shapes[f"head.{spec.name}.W"] = (config.d_model, spec.num_classes)
        shapes[f"head.{spec.name}.b"] = (spec.num_classes,)
    return shapes


def load_checkpoint(path):
    """
    Rebuild a model from ``path`` and its sidecar.

    Every record is parsed and checked against the shapes implied by the
    sidecar before any model object is built; on error nothing is returned.
    The optimizer state starts fresh.
    """
    path = Path(path)
    with open(path, "rb") as file:
        tensors = decode_tensors(file.read())
    with open(sidecar_path(path), encoding="utf-8") as file:
        meta = json.load(file)

    config = EncoderConfig.from_dict(meta["encoder"])
    tasks = [TaskSpec(**task) for task in meta["tasks"]]
    expected = _expected_shapes(config, tasks)
    for name, array in tensors.items():
        if name not in expected:
            raise CorruptCheckpointError("unexpected tensor", name)
        if tuple(array.shape) != tuple(expected[name]):
            raise CorruptCheckpointError(
                f"shape {list(array.shape)} does not match expected {list(expected[name])}",
                name,
            )
    missing = [name for name in expected if name not in tensors]
    if missing:
        raise CorruptCheckpointError("tensor missing from checkpoint", missing[0])

    def param(name):
        return Tensor(tensors[name], requires_grad=True, name=name)

    encoder = EncoderState(
        config,
        {name[len("encoder."):]: param(name) for name in expected if name.startswith("encoder.")},
    )
    vocab = Vocabulary(meta["vocabulary"]) if meta.get("vocabulary") is not None else None
    model = MultitaskModel(encoder, vocab=vocab, lr=meta.get("lr", 1e-5))
    for spec in tasks:
        model.tasks[spec.name] = spec
        model.heads[spec.name] = TaskHead(
            W=param(f"head.{spec.name}.W"), b=param(f"head.{spec.name}.b")
        )
    model.optimizer = AdamState(lr=model.optimizer.lr)
    if meta.get("encoder_frozen"):
        model.freeze_encoder()
    logger.info("loaded checkpoint %s (%d tasks)", path, len(tasks))
    return model
