"""Binary framing for streamed PPG samples.

Frame layout (all little-endian)::

    0   4s  magic  b"WBPG"
    4   B   version (1)
    5   Q   session id
    13  I   sequence number
    17  H   n_samples
    19  ... n_samples * 4 float32, sample-major (s0ch0 s0ch1 s0ch2 s0ch3 s1ch0 ...)
"""

import struct
from dataclasses import dataclass

import numpy as np

from ppgauth.errors import BadMagic, BadVersion, LengthMismatch, Truncated

MAGIC = b"WBPG"
VERSION = 1
N_CHANNELS = 4
HEADER = struct.Struct("<4sBQIH")
HEADER_SIZE = HEADER.size  # 19
BYTES_PER_SAMPLE = 4 * N_CHANNELS
MAX_SAMPLES = 0xFFFF


@dataclass(frozen=True, eq=False)
class FramedPacket:
    session_id: int
    seq: int
    samples: np.ndarray  # (n_samples, 4) float32

    def __post_init__(self):
        arr = np.ascontiguousarray(self.samples, dtype="<f4").reshape(-1, N_CHANNELS)
        object.__setattr__(self, "samples", arr)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FramedPacket):
            return NotImplemented
        return (self.session_id == other.session_id and self.seq == other.seq
                and self.samples.tobytes() == other.samples.tobytes())

    __hash__ = None


def encode_packet(p):
    if not 0 <= p.n_samples <= MAX_SAMPLES:
        raise LengthMismatch(f"{p.n_samples} samples do not fit a frame")
    if not 0 <= p.session_id < 2 ** 64 or not 0 <= p.seq < 2 ** 32:
        raise ValueError("session_id or seq out of range")
    return HEADER.pack(MAGIC, VERSION, p.session_id, p.seq, p.n_samples) + p.samples.tobytes()


def parse_header(buf):
    """Validate a 19-byte header; returns ``(session_id, seq, n_samples)``."""
    if len(buf) < HEADER_SIZE:
        raise Truncated(f"{len(buf)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, session_id, seq, n = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    return session_id, seq, n


def decode_packet(buf):
    session_id, seq, n = parse_header(buf)
    expected = HEADER_SIZE + n * BYTES_PER_SAMPLE
    if len(buf) != expected:
        raise LengthMismatch(f"frame is {len(buf)} bytes, header implies {expected}")
    samples = np.frombuffer(bytes(buf[HEADER_SIZE:]), dtype="<f4").reshape(n, N_CHANNELS)
    return FramedPacket(session_id, seq, samples)


def _read_exact(stream, n):
    chunks = []
    got = 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_packet(stream):
    """Read one frame from a binary file-like object.

    Returns ``None`` on a clean end of stream; raises :class:`Truncated` if
    the stream ends inside a frame.
    """
    head = _read_exact(stream, HEADER_SIZE)
    if not head:
        return None
    _, _, n = parse_header(head)
    body = _read_exact(stream, n * BYTES_PER_SAMPLE)
    if len(body) != n * BYTES_PER_SAMPLE:
        raise Truncated("stream ended inside a frame payload")
    return decode_packet(head + body)
