"""Bit-slice two-state container: a file format for plane-compressed weights.

Layout, all little-endian:

======================  =====  ===============================================
field                   type   meaning
======================  =====  ===============================================
magic                   4s     ``b"BSTC"`` (bit-slice two-state container)
version                 u16    format version, currently 1
plane_flags             u16    bit ``b - 1`` set means plane ``b`` is
                               compressed (planes 1..bit_width, sign included)
rows, cols              u32    matrix shape
bit_width               u8     planes per value, sign plane included
m                       u8     group size the streams were built with
segment_len             u32    columns per segment
n_segments              u16    ``ceil(cols / segment_len)``
reserved                u16    written as 0, ignored on read
======================  =====  ===============================================

The header is followed by a table of ``bit_width * n_segments`` entries of
``(byte_offset u64, bit_length u64)``, one per stream in plane-major order
(plane 1 segment 0, plane 1 segment 1, ..., sign plane last); offsets are
absolute file positions.  A CRC-32 (u32) of header plus table comes next,
then the byte-aligned streams.  Each stream is one segment of one plane,
either two-state encoded or raw-grouped (see ``codec``), so any segment can
be fetched and decoded knowing only the header and table.

Damage model: a wrong magic or version raises ``UnsupportedFormatError``;
structural damage (CRC mismatch, impossible field values, offsets outside
the file) raises ``CorruptContainerError``; a stream that fails to decode
raises ``CorruptStreamError``.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .codec import (
    compression_policy,
    decode_plane,
    encode_plane,
    pack_plane_raw,
    unpack_plane_raw,
)
from .errors import CorruptContainerError, UnsupportedFormatError
from .planes import SignMagnitudeTensor

MAGIC = b"BSTC"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIBBIHH")
_ENTRY = struct.Struct("<QQ")
_CRC = struct.Struct("<I")


@dataclass
class ContainerHeader:
    """Parsed header and stream table; enough to fetch any segment."""

    version: int
    plane_flags: int
    rows: int
    cols: int
    bit_width: int
    m: int
    segment_len: int
    n_segments: int
    entries: list[tuple[int, int]]
    data_start: int

    def is_compressed(self, plane: int) -> bool:
        if not 1 <= plane <= self.bit_width:
            raise ValueError(f"plane {plane} outside 1..{self.bit_width}")
        return bool(self.plane_flags >> (plane - 1) & 1)

    def segment_cols(self, segment: int) -> int:
        if not 0 <= segment < self.n_segments:
            raise ValueError(f"segment {segment} outside 0..{self.n_segments - 1}")
        start = segment * self.segment_len
        return min(self.segment_len, self.cols - start)

    def entry(self, plane: int, segment: int) -> tuple[int, int]:
        return self.entries[(plane - 1) * self.n_segments + segment]

    @property
    def total_streams(self) -> int:
        return self.bit_width * self.n_segments


@dataclass
class ContainerSummary:
    """Write-side accounting: where the bits went."""

    total_bytes: int
    plane_flags: int
    stream_bits: list[int]
    raw_bits: int

    @property
    def payload_bits(self) -> int:
        return sum(self.stream_bits)


def _opened(fh, mode: str):
    if isinstance(fh, (str, os.PathLike)):
        return open(fh, mode), True
    return fh, False


def write_container(
    fh,
    tensor: SignMagnitudeTensor,
    m: int,
    segment_len: int = 1024,
    threshold: float = 0.65,
) -> ContainerSummary:
    """Serialize a sign-magnitude tensor; returns per-stream accounting.

    ``fh`` may be a binary file object or a path.  Rows must be a multiple
    of ``m`` (callers pad beforehand, the format stores whole groups only).
    """
    if not 1 <= m <= 16:
        raise ValueError(f"group size m must be in 1..16, got {m}")
    if tensor.rows % m != 0:
        raise ValueError(f"group size {m} does not divide {tensor.rows} rows")
    if segment_len < 1:
        raise ValueError("segment_len must be positive")
    k = tensor.bit_width
    n_segments = -(-tensor.cols // segment_len)
    if n_segments > 0xFFFF:
        raise ValueError(f"{n_segments} segments exceed the u16 header field")

    flags = 0
    streams: list[bytes] = []
    bit_lengths: list[int] = []
    for b in range(1, k + 1):
        plane = tensor.plane(b)
        compressed = compression_policy(plane, threshold)
        if compressed:
            flags |= 1 << (b - 1)
        for s in range(n_segments):
            seg = plane[:, s * segment_len : (s + 1) * segment_len]
            data, nbits = (encode_plane if compressed else pack_plane_raw)(seg, m)
            streams.append(data)
            bit_lengths.append(nbits)

    data_start = _HEADER.size + _ENTRY.size * k * n_segments + _CRC.size
    offsets = []
    pos = data_start
    for data in streams:
        offsets.append(pos)
        pos += len(data)

    header = _HEADER.pack(
        MAGIC, VERSION, flags, tensor.rows, tensor.cols, k, m,
        segment_len, n_segments, 0,
    )
    table = b"".join(_ENTRY.pack(o, n) for o, n in zip(offsets, bit_lengths))
    crc = zlib.crc32(header + table) & 0xFFFFFFFF

    out, owned = _opened(fh, "wb")
    try:
        out.write(header)
        out.write(table)
        out.write(_CRC.pack(crc))
        for data in streams:
            out.write(data)
    finally:
        if owned:
            out.close()
    return ContainerSummary(
        total_bytes=pos,
        plane_flags=flags,
        stream_bits=bit_lengths,
        raw_bits=k * tensor.rows * tensor.cols,
    )


def read_header(fh) -> ContainerHeader:
    src, owned = _opened(fh, "rb")
    try:
        src.seek(0)
        head = src.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise CorruptContainerError("file shorter than the fixed header")
        magic, version, flags, rows, cols, k, m, seg_len, n_seg, _ = _HEADER.unpack(head)
        if magic != MAGIC:
            raise UnsupportedFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise UnsupportedFormatError(f"unsupported container version {version}")
        table = src.read(_ENTRY.size * k * n_seg)
        if len(table) < _ENTRY.size * k * n_seg:
            raise CorruptContainerError("truncated stream table")
        crc_raw = src.read(_CRC.size)
        if len(crc_raw) < _CRC.size:
            raise CorruptContainerError("missing checksum")
        if zlib.crc32(head + table) & 0xFFFFFFFF != _CRC.unpack(crc_raw)[0]:
            raise CorruptContainerError("header checksum mismatch")

        if rows < 1 or cols < 1:
            raise CorruptContainerError(f"impossible matrix shape ({rows}, {cols})")
        if not 2 <= k <= 16:
            raise CorruptContainerError(f"bit width {k} outside 2..16")
        if not 1 <= m <= 16:
            raise CorruptContainerError(f"group size {m} outside 1..16")
        if rows % m != 0:
            raise CorruptContainerError(f"group size {m} does not divide {rows} rows")
        if seg_len < 1 or n_seg != -(-cols // seg_len):
            raise CorruptContainerError(
                f"{n_seg} segments inconsistent with {cols} columns of {seg_len}"
            )
        data_start = _HEADER.size + _ENTRY.size * k * n_seg + _CRC.size
        entries = [_ENTRY.unpack_from(table, i * _ENTRY.size) for i in range(k * n_seg)]
        for offset, nbits in entries:
            if offset < data_start:
                raise CorruptContainerError(f"stream offset {offset} inside the header")
        return ContainerHeader(
            version=version, plane_flags=flags, rows=rows, cols=cols,
            bit_width=k, m=m, segment_len=seg_len, n_segments=n_seg,
            entries=entries, data_start=data_start,
        )
    finally:
        if owned:
            src.close()


def read_segment(fh, header: ContainerHeader, plane: int, segment: int) -> np.ndarray:
    """Fetch and decode one segment of one plane as an ``(rows, sc)`` bit matrix."""
    offset, nbits = header.entry(plane, segment)
    sc = header.segment_cols(segment)
    nbytes = (nbits + 7) // 8
    src, owned = _opened(fh, "rb")
    try:
        src.seek(offset)
        data = src.read(nbytes)
    finally:
        if owned:
            src.close()
    if len(data) < nbytes:
        raise CorruptContainerError(
            f"stream for plane {plane} segment {segment} runs past end of file"
        )
    if header.is_compressed(plane):
        return decode_plane(data, nbits, header.rows, sc, header.m)
    return unpack_plane_raw(data, nbits, header.rows, sc, header.m)


def read_container(fh) -> SignMagnitudeTensor:
    """Reassemble the full tensor from a container file or binary stream."""
    src, owned = _opened(fh, "rb")
    try:
        header = read_header(src)
        planes = []
        for b in range(1, header.bit_width + 1):
            segs = [read_segment(src, header, b, s) for s in range(header.n_segments)]
            planes.append(np.hstack(segs) if len(segs) > 1 else segs[0])
    finally:
        if owned:
            src.close()
    magnitude = np.stack(planes[:-1]) if header.bit_width > 1 else np.empty(
        (0, header.rows, header.cols), dtype=np.uint8
    )
    return SignMagnitudeTensor(
        bit_width=header.bit_width, sign=planes[-1], magnitude=magnitude
    )
