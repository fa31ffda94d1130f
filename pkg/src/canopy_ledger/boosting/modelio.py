"""CGBM model files.

Layout (little-endian): ``b"CGBM"``, u16 version, u32 header length, UTF-8
JSON header (config, init value, feature order tag, tree count), then per
tree u32 node count followed by i32 feature, f64 threshold, i32 left,
i32 right and f64 leaf value arrays. Readers reject versions newer than
their own.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import FormatError, LengthError
from .gbr import GbrConfig, GbrModel
from .tree import Tree

MAGIC = b"CGBM"
VERSION = 1


def encode_model(model: GbrModel) -> bytes:
    header = {
        "config": asdict(model.config),
        "init_value": model.init_value,
        "learning_rate": model.learning_rate,
        "huber_delta": model.huber_delta,
        "feature_order_tag": model.feature_order_tag,
        "n_estimators": model.n_estimators,
        "n_features": model.n_features,
        "n_trees": len(model.trees),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(hb)), hb]
    for t in model.trees:
        parts.append(struct.pack("<I", t.n_nodes))
        parts.append(t.feature.astype("<i4").tobytes())
        parts.append(t.threshold.astype("<f8").tobytes())
        parts.append(t.left.astype("<i4").tobytes())
        parts.append(t.right.astype("<i4").tobytes())
        parts.append(np.ascontiguousarray(t.value[:, 0]).astype("<f8").tobytes())
    return b"".join(parts)


def decode_model(buf: bytes) -> GbrModel:
    if buf[:4] != MAGIC:
        raise FormatError("not a CGBM model file")
    if len(buf) < 10:
        raise LengthError("truncated CGBM header")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version > VERSION:
        raise FormatError(f"CGBM version {version} is newer than supported {VERSION}")
    off = 10
    if len(buf) < off + hlen:
        raise LengthError("truncated CGBM header")
    h = json.loads(buf[off : off + hlen].decode("utf-8"))
    off += hlen
    trees = []
    for _ in range(h["n_trees"]):
        if len(buf) < off + 4:
            raise LengthError("truncated CGBM tree table")
        (m,) = struct.unpack_from("<I", buf, off)
        off += 4
        need = m * (4 + 8 + 4 + 4 + 8)
        if len(buf) < off + need:
            raise LengthError("truncated CGBM tree body")

        def take(dt, nbytes):
            nonlocal off
            a = np.frombuffer(buf, dtype=dt, count=m, offset=off).astype(dt[1:])
            off += nbytes * m
            return a

        feat = take("<i4", 4).astype(np.int32)
        thr = take("<f8", 8).astype(np.float64)
        left = take("<i4", 4).astype(np.int32)
        right = take("<i4", 4).astype(np.int32)
        val = take("<f8", 8).astype(np.float64)[:, None]
        trees.append(Tree(feat, thr, left, right, val))
    if off != len(buf):
        raise LengthError(f"{len(buf) - off} trailing bytes after CGBM trees")
    return GbrModel(h["init_value"], trees, h["learning_rate"], h["huber_delta"], h["feature_order_tag"],
                    h["n_estimators"], h["n_features"], GbrConfig(**h["config"]))


def save_model(path, model: GbrModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(model))
    return path


def load_model(path) -> GbrModel:
    return decode_model(Path(path).read_bytes())
