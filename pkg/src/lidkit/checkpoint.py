"""Versioned binary model checkpoints.

Layout: 8-byte magic, u32 version, length-prefixed JSON architecture
descriptor, u32 tensor count, then per tensor a length-prefixed name,
u8 rank, u32 dims, and row-major little-endian float32 data. Tensors
are written in sorted-name order so identical models produce identical
bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from lidkit.errors import LidKitError
from lidkit.nnet import BnDnn, Classifier, DenseLayer, LstmLayer

MAGIC = b"LIDNNCKP"
VERSION = 1


def save_checkpoint(path: str | os.PathLike, kind: str, arch: dict,
                    params: dict[str, np.ndarray]) -> None:
    descriptor = json.dumps({"kind": kind, **arch}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(descriptor)))
        fh.write(descriptor)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            tensor = np.ascontiguousarray(params[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(tensor.tobytes())


def load_checkpoint(path: str | os.PathLike) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise LidKitError(f"not a checkpoint file: {path}", code="bad-checkpoint")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise LidKitError(f"unsupported checkpoint version {version}",
                          code="bad-checkpoint")
    (desc_len,) = struct.unpack_from("<I", data, 12)
    offset = 16
    descriptor = json.loads(data[offset : offset + desc_len].decode("utf-8"))
    offset += desc_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4

    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(data, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        params[name] = values.reshape(shape).copy()
    kind = descriptor.pop("kind")
    return kind, descriptor, params


def save_bn_dnn(path: str | os.PathLike, dnn: BnDnn) -> None:
    arch = {
        "input_dim": dnn.input_dim,
        "activations": [l.activation for l in dnn.layers],
        "sizes": [l.weight.shape[0] for l in dnn.layers],
    }
    save_checkpoint(path, "bn_dnn", arch, dnn.parameters())


def load_bn_dnn(path: str | os.PathLike) -> BnDnn:
    kind, arch, params = load_checkpoint(path)
    if kind != "bn_dnn":
        raise LidKitError(f"expected bn_dnn checkpoint, got {kind}",
                          code="bad-checkpoint")
    layers = [
        DenseLayer(weight=params[f"layer{i}.weight"], bias=params[f"layer{i}.bias"],
                   activation=act)
        for i, act in enumerate(arch["activations"])
    ]
    return BnDnn(layers=layers)


def save_classifier(path: str | os.PathLike, model: Classifier) -> None:
    arch = {
        "input_dim": model.input_dim,
        "lstm_size": model.lstm1.hidden_size,
        "relu_size": model.fc.weight.shape[0],
        "classes": model.num_classes,
    }
    save_checkpoint(path, "lid_classifier", arch, model.parameters())


def load_classifier(path: str | os.PathLike) -> Classifier:
    kind, _, params = load_checkpoint(path)
    if kind != "lid_classifier":
        raise LidKitError(f"expected lid_classifier checkpoint, got {kind}",
                          code="bad-checkpoint")

    def lstm(prefix: str) -> LstmLayer:
        return LstmLayer(*(params[f"{prefix}.{f}"] for f in
                           ("wf", "wi", "wc", "wo", "bf", "bi", "bc", "bo")))

    return Classifier(
        lstm1=lstm("lstm1"), lstm2=lstm("lstm2"),
        fc=DenseLayer(params["fc.weight"], params["fc.bias"], "relu"),
        out=DenseLayer(params["out.weight"], params["out.bias"], "softmax"),
    )
