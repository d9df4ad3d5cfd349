"""Embedding store and its on-disk binary format.

Layout (all integers little-endian):

    magic   4 bytes  b"UNIR"
    version u16      1
    mode    u8       0 = feature fusion, 1 = score fusion
    dim     u32
    count   u64
    ids     count * [len u16, utf-8 bytes]
    data    feature mode: count*dim f32 row-major matrix
            score mode:   presence bitmask, image matrix, text matrix
    crc     u32      CRC32 of every preceding byte

The presence bitmask holds two bits per row, LSB-first within each byte:
bit 2*i is the image presence of row i, bit 2*i+1 the text presence, padded
to a whole byte count. A presence bit is off exactly when the corresponding
row is the all-zero placeholder.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from unir.errors import BadMagic, ChecksumMismatch, DimMismatch

MAGIC = b"UNIR"
VERSION = 1


class StoreMode(enum.Enum):
    FEATURE = 0
    SCORE = 1


@dataclass
class EmbeddingStore:
    """Per-item embedding rows keyed by id, in insertion order.

    Feature mode keeps one fused matrix; score mode keeps an image matrix and
    a text matrix where a missing modality is the all-zero placeholder row.
    """

    dim: int
    mode: StoreMode
    ids: list[str]
    feature: np.ndarray | None = None
    image: np.ndarray | None = None
    text: np.ndarray | None = None

    def __post_init__(self):
        count = len(self.ids)
        if self.mode is StoreMode.FEATURE:
            if self.feature is None:
                self.feature = np.zeros((count, self.dim), dtype=np.float32)
            self._check_matrix("feature", self.feature, count)
        else:
            if self.image is None:
                self.image = np.zeros((count, self.dim), dtype=np.float32)
            if self.text is None:
                self.text = np.zeros((count, self.dim), dtype=np.float32)
            self._check_matrix("image", self.image, count)
            self._check_matrix("text", self.text, count)
        if len(set(self.ids)) != count:
            raise ValueError("store ids must be unique")
        self._index = {did: i for i, did in enumerate(self.ids)}

    def _check_matrix(self, name: str, mat: np.ndarray, count: int) -> None:
        if mat.shape != (count, self.dim):
            raise DimMismatch(f"{name} matrix shape {mat.shape} != ({count}, {self.dim})")
        if mat.dtype != np.float32:
            raise ValueError(f"{name} matrix must be float32")
        if not np.all(np.isfinite(mat)):
            raise ValueError(f"{name} matrix contains non-finite entries")

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, did: str) -> int:
        return self._index[did]

    def __contains__(self, did: str) -> bool:
        return did in self._index

    def row(self, did: str) -> np.ndarray:
        """Feature-mode row lookup (used for raw image feature stores)."""
        if self.mode is not StoreMode.FEATURE:
            raise ValueError("row() is only defined for feature-mode stores")
        return self.feature[self._index[did]]

    @property
    def presence(self) -> np.ndarray:
        """(count, 2) bool array: column 0 image present, column 1 text present."""
        if self.mode is StoreMode.FEATURE:
            raise ValueError("presence is only defined for score-mode stores")
        img_on = np.any(self.image != 0.0, axis=1)
        txt_on = np.any(self.text != 0.0, axis=1)
        return np.stack([img_on, txt_on], axis=1)


def _pack_presence(presence: np.ndarray) -> bytes:
    bits = np.zeros(presence.shape[0] * 2, dtype=np.uint8)
    bits[0::2] = presence[:, 0]
    bits[1::2] = presence[:, 1]
    return np.packbits(bits, bitorder="little").tobytes()


def _unpack_presence(raw: bytes, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    bits = bits[: 2 * count]
    return np.stack([bits[0::2], bits[1::2]], axis=1).astype(bool)


def write_embeddings(store: EmbeddingStore, path: str) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<HBIQ", VERSION, store.mode.value, store.dim, len(store))
    for did in store.ids:
        encoded = did.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"id too long: {did!r}")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
    if store.mode is StoreMode.FEATURE:
        buf += np.ascontiguousarray(store.feature, dtype="<f4").tobytes()
    else:
        buf += _pack_presence(store.presence)
        buf += np.ascontiguousarray(store.image, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(store.text, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as fh:
        fh.write(buf)


def read_embeddings(path: str) -> EmbeddingStore:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not an embedding file")
    if len(raw) < 4 + 15 + 4:
        raise ChecksumMismatch(f"{path}: file truncated")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    body = raw[:-4]
    if zlib.crc32(body) != stored_crc:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch")
    version, mode_val, dim, count = struct.unpack_from("<HBIQ", body, 4)
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    try:
        mode = StoreMode(mode_val)
    except ValueError as exc:
        raise BadMagic(f"{path}: unknown mode byte {mode_val}") from exc
    offset = 4 + struct.calcsize("<HBIQ")
    ids: list[str] = []
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<H", body, offset)
            offset += 2
            ids.append(body[offset : offset + length].decode("utf-8"))
            offset += length
        matrix_bytes = count * dim * 4
        if mode is StoreMode.FEATURE:
            feature = _read_matrix(body, offset, count, dim)
            offset += matrix_bytes
            _expect_end(body, offset, path)
            return EmbeddingStore(dim=dim, mode=mode, ids=ids, feature=feature)
        presence_bytes = (2 * count + 7) // 8
        presence = _unpack_presence(body[offset : offset + presence_bytes], count)
        offset += presence_bytes
        image = _read_matrix(body, offset, count, dim)
        offset += matrix_bytes
        text = _read_matrix(body, offset, count, dim)
        offset += matrix_bytes
        _expect_end(body, offset, path)
    except struct.error as exc:
        raise ChecksumMismatch(f"{path}: file truncated") from exc
    store = EmbeddingStore(dim=dim, mode=mode, ids=ids, image=image, text=text)
    if count and not np.array_equal(store.presence, presence):
        raise DimMismatch(f"{path}: presence bitmask disagrees with zero rows")
    return store


def _read_matrix(body: bytes, offset: int, count: int, dim: int) -> np.ndarray:
    end = offset + count * dim * 4
    if end > len(body):
        raise ChecksumMismatch("matrix extends past end of file")
    return (
        np.frombuffer(body[offset:end], dtype="<f4").reshape(count, dim).astype(np.float32)
    )


def _expect_end(body: bytes, offset: int, path: str) -> None:
    if offset != len(body):
        raise ChecksumMismatch(f"{path}: {len(body) - offset} trailing bytes")
