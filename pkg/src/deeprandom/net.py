"""Simulated public channel: byte-exact framing, CRC-32, interposer hook.

Frame layout (big-endian)::

    tag:u8 | session_id:8 bytes | round_index:u32 | length:u32 | payload | crc32:u32

The CRC is zlib's CRC-32 (reflected 0x04C11DB7) over every preceding byte.
Bit vectors are packed little-endian within bytes in index order;
permutations are arrays of u32 images, pairs concatenated in the order
transmitted.
"""

from __future__ import annotations

import enum
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

HEADER = struct.Struct(">B8sII")
CRC = struct.Struct(">I")
MAX_PAYLOAD = 1 << 24
TIMEOUT_TICKS = 10_000

A_TO_B = "A->B"
B_TO_A = "B->A"


class Tag(enum.IntEnum):
    I_VEC = 1
    J_VEC = 2
    MU_PAIR = 3
    MU_PRIME_PAIR = 4
    RHO = 5
    CODEWORD_MASKED = 6
    BLOCK_VERDICT = 7
    PA_SEED = 8
    VERIFY_CODE_A = 9
    VERIFY_CODE_B = 10
    FINAL_ACK = 11


PAIR_TAGS = (Tag.MU_PAIR, Tag.MU_PRIME_PAIR)


class WireError(Exception):
    """Base class for anything wrong with bytes received from the channel."""


class LengthError(WireError):
    pass


class CorruptionError(WireError):
    pass


class ProtocolError(WireError):
    pass


class StructureError(WireError):
    pass


class ChannelTimeout(WireError):
    """An expected message never arrived (liveness failure)."""


@dataclass(frozen=True)
class WireMessage:
    tag: Tag
    session_id: bytes
    round_index: int
    payload: bytes


def frame(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise LengthError(f"payload of {len(msg.payload)} bytes exceeds {MAX_PAYLOAD}")
    if len(msg.session_id) != 8:
        raise LengthError("session id must be 8 bytes")
    body = HEADER.pack(int(msg.tag), msg.session_id, msg.round_index, len(msg.payload)) + msg.payload
    return body + CRC.pack(zlib.crc32(body))


def parse(data: bytes, *, validate_permutations: bool = True) -> WireMessage:
    if len(data) < HEADER.size + CRC.size:
        raise LengthError(f"frame of {len(data)} bytes is shorter than the fixed fields")
    body, (crc,) = data[:-CRC.size], CRC.unpack(data[-CRC.size:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("checksum mismatch")
    tag, sid, rnd, length = HEADER.unpack(body[: HEADER.size])
    payload = body[HEADER.size:]
    if len(payload) != length:
        raise LengthError(f"declared payload length {length} but {len(payload)} bytes present")
    try:
        tag = Tag(tag)
    except ValueError:
        raise ProtocolError(f"unknown tag {tag}") from None
    if validate_permutations and tag in PAIR_TAGS:
        decode_perm_pair(payload)
    return WireMessage(tag, sid, rnd, payload)


# -- payload codecs ------------------------------------------------------------

def encode_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def decode_bits(payload: bytes, nbits: int) -> np.ndarray:
    if len(payload) != (nbits + 7) // 8:
        raise StructureError(f"bit payload of {len(payload)} bytes cannot hold exactly {nbits} bits")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    if bits[nbits:].any():
        raise StructureError("non-zero padding bits")
    return bits[:nbits].copy()


def encode_perm_pair(pair) -> bytes:
    first, second = pair
    return b"".join(np.asarray(p, dtype=">u4").tobytes() for p in (first, second))


def decode_perm_pair(payload: bytes, validate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if len(payload) % 8:
        raise StructureError("permutation pair payload length must be a multiple of 8")
    n = len(payload) // 8
    arr = np.frombuffer(payload, dtype=">u4").astype(np.int64)
    first, second = arr[:n], arr[n:]
    if validate:
        for p in (first, second):
            seen = np.zeros(n, dtype=bool)
            if n and p.max() >= n:
                raise StructureError("permutation image out of range")
            seen[p] = True
            if not seen.all():
                raise StructureError("permutation is not a bijection")
    return first, second


def encode_float(v: float) -> bytes:
    return struct.pack(">d", v)


def decode_float(payload: bytes) -> float:
    if len(payload) != 8:
        raise StructureError("float payload must be 8 bytes")
    return struct.unpack(">d", payload)[0]


def encode_flag(v: bool) -> bytes:
    return b"\x01" if v else b"\x00"


def decode_flag(payload: bytes) -> bool:
    if payload not in (b"\x00", b"\x01"):
        raise StructureError("flag payload must be a single 0/1 byte")
    return payload == b"\x01"


# -- channel -------------------------------------------------------------------

class Interposer:
    """Pass-through hook; subclasses see every public frame and decide delivery."""

    def intercept(self, direction: str, msg: WireMessage, raw: bytes) -> list[bytes]:
        return [raw]


@dataclass
class Endpoint:
    name: str
    channel: "Channel"
    inbox: deque = field(default_factory=deque)

    def send(self, tag: Tag, round_index: int, payload: bytes) -> None:
        msg = WireMessage(tag, self.channel.session_id, round_index, payload)
        self.channel.transmit(self.name, msg)

    def recv(self, tag: Tag, round_index: int | None = None) -> WireMessage:
        if not self.inbox:
            self.channel.ticks += TIMEOUT_TICKS
            raise ChannelTimeout(f"{self.name} timed out waiting for {tag.name}")
        raw = self.inbox.popleft()
        self.channel.ticks += 1
        msg = parse(raw, validate_permutations=self.channel.validate_permutations)
        if msg.tag != tag:
            raise ProtocolError(f"{self.name} expected {tag.name}, got {msg.tag.name}")
        if msg.session_id != self.channel.session_id:
            raise ProtocolError("session id mismatch")
        if round_index is not None and msg.round_index != round_index:
            raise ProtocolError(f"expected round {round_index}, got {msg.round_index}")
        return msg


class Channel:
    """Two endpoints joined through an interposer.

    With ``capture=True`` every delivered frame is logged with its direction
    so the exchange can be written out and read back byte for byte.
    """

    def __init__(
        self,
        interposer: Interposer | None = None,
        session_id: bytes = b"\x00" * 8,
        *,
        validate_permutations: bool = True,
        capture: bool = False,
    ):
        self.interposer = interposer or Interposer()
        self.session_id = session_id
        self.validate_permutations = validate_permutations
        self.ticks = 0
        self.a = Endpoint("A", self)
        self.b = Endpoint("B", self)
        self.log: list[tuple[str, bytes]] | None = [] if capture else None

    def transmit(self, sender: str, msg: WireMessage) -> None:
        direction = A_TO_B if sender == "A" else B_TO_A
        raw = frame(msg)
        dest = self.b if direction == A_TO_B else self.a
        for out in self.interposer.intercept(direction, msg, raw):
            if self.log is not None:
                self.log.append((direction, out))
            dest.inbox.append(out)

    def write_capture(self, path: str | Path) -> None:
        if self.log is None:
            raise ValueError("channel was created without capture")
        write_capture(path, self.log)


def channel_with_interposer(
    script: Interposer | None = None, session_id: bytes = b"\x00" * 8, **kw
) -> tuple[Endpoint, Endpoint]:
    ch = Channel(script, session_id, **kw)
    return ch.a, ch.b


def write_capture(path: str | Path, records: Iterable[tuple[str, bytes]]) -> None:
    with open(path, "wb") as fh:
        for direction, raw in records:
            fh.write(b"\x00" if direction == A_TO_B else b"\x01")
            fh.write(struct.pack(">I", len(raw)))
            fh.write(raw)


def read_capture(path: str | Path) -> Iterator[tuple[str, bytes]]:
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        if pos + 5 > len(data):
            raise LengthError("truncated capture record header")
        direction = A_TO_B if data[pos] == 0 else B_TO_A
        (length,) = struct.unpack(">I", data[pos + 1 : pos + 5])
        pos += 5
        if pos + length > len(data):
            raise LengthError("truncated capture record")
        yield direction, data[pos : pos + length]
        pos += length
