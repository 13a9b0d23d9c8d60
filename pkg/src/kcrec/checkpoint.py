"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     8 bytes  b"KCRECKPT"
    version   u32
    record*   one header record, then one record per named array
    trailer   u32 record count, u32 CRC32 of everything before it

Every record is ``u32 body length, body, u32 CRC32(body)``. The header body
is UTF-8 text: a ``graph_digest``/``relations`` preamble, a blank line, then
the run config. An array body is ``u16 name length, name, u8 ndim,
u64 dims..., float64 LE values``.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from kcrec.config import RunConfig
from kcrec.errors import CompatibilityError, FormatError

MAGIC = b"KCRECKPT"
VERSION = 1


class Checkpoint:
    def __init__(self, config: RunConfig, graph_digest: str, relation_names, arrays: dict):
        self.config = config
        self.graph_digest = graph_digest
        self.relation_names = list(relation_names)
        self.arrays = dict(arrays)

    @classmethod
    def from_model(cls, model) -> "Checkpoint":
        arrays = {"features": model.features}
        arrays.update(model.state())
        return cls(model.cfg, model.hin.shape_digest(), model.hin.relation_names, arrays)

    def check_graph(self, hin):
        digest = hin.shape_digest()
        if digest != self.graph_digest:
            raise CompatibilityError(
                f"checkpoint was trained on graph {self.graph_digest}, dataset has {digest}")

    def build_model(self, hin):
        """Model over ``hin`` (the training graph) carrying the stored parameters."""
        from kcrec.model import KCRec
        self.check_graph(hin)
        model = KCRec(hin, self.arrays["features"], self.config)
        model.load_state(self.arrays)
        return model

    # -- bytes -----------------------------------------------------------
    def to_bytes(self) -> bytes:
        header = (f"graph_digest={self.graph_digest}\n"
                  f"relations={','.join(self.relation_names)}\n\n" + self.config.to_text())
        out = bytearray(MAGIC + struct.pack("<I", VERSION))
        records = [header.encode("utf-8")]
        for name, value in self.arrays.items():
            a = np.ascontiguousarray(value, dtype="<f8")
            nb = name.encode("utf-8")
            body = struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim)
            body += struct.pack(f"<{a.ndim}Q", *a.shape) + a.tobytes()
            records.append(body)
        for body in records:
            out += struct.pack("<I", len(body)) + body + struct.pack("<I", zlib.crc32(body))
        out += struct.pack("<I", len(records))
        out += struct.pack("<I", zlib.crc32(bytes(out)))
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < 12 or data[:8] != MAGIC:
            raise FormatError("not a checkpoint: bad magic at offset 0")
        (version,) = struct.unpack_from("<I", data, 8)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version} at offset 8 (expected {VERSION})")
        pos = 12
        records = []
        while len(data) - pos > 8:
            start = pos
            (n,) = struct.unpack_from("<I", data, pos)
            if pos + 4 + n + 4 > len(data) - 8:
                raise FormatError(f"record at offset {start} overruns the file")
            body = data[pos + 4:pos + 4 + n]
            (crc,) = struct.unpack_from("<I", data, pos + 4 + n)
            if zlib.crc32(body) != crc:
                raise FormatError(f"checksum mismatch in record at offset {start}")
            records.append((start, body))
            pos += n + 8
        if len(data) - pos != 8:
            raise FormatError(f"truncated trailer at offset {pos}")
        count, crc = struct.unpack_from("<II", data, pos)
        if count != len(records) or zlib.crc32(data[:pos + 4]) != crc:
            raise FormatError(f"trailer mismatch at offset {pos}")
        if not records:
            raise FormatError("checkpoint has no header record at offset 12")
        start, header = records[0]
        try:
            meta_text, cfg_text = header.decode("utf-8").split("\n\n", 1)
            meta = dict(line.split("=", 1) for line in meta_text.splitlines())
            config = RunConfig.from_text(cfg_text)
            digest, relations = meta["graph_digest"], meta["relations"].split(",")
        except (UnicodeDecodeError, ValueError, KeyError) as exc:
            raise FormatError(f"bad header record at offset {start}: {exc}") from None
        arrays = {}
        for start, body in records[1:]:
            try:
                (ln,) = struct.unpack_from("<H", body, 0)
                name = body[2:2 + ln].decode("utf-8")
                (ndim,) = struct.unpack_from("<B", body, 2 + ln)
                shape = struct.unpack_from(f"<{ndim}Q", body, 3 + ln)
                off = 3 + ln + 8 * ndim
                values = np.frombuffer(body, dtype="<f8", offset=off)
                arrays[name] = values.reshape(shape).astype(np.float64)
            except (struct.error, UnicodeDecodeError, ValueError) as exc:
                raise FormatError(f"bad array record at offset {start}: {exc}") from None
        if "features" not in arrays:
            raise FormatError("checkpoint lacks the features array")
        return cls(config, digest, relations, arrays)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def save_model(model, path):
    Checkpoint.from_model(model).save(path)


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.load(path)
