"""Synthetic key/query/value tensor traces, with planted needles and binary I/O.

File format (all little-endian):
    magic "LKVT" | version u32 | L u32 | H u32 | d u32 | T u32
    | needle_count u32 | seed u64
    | needle records: position u32, target_cosine f32, label_len u16, label utf-8
    | payload: keys, values, queries as contiguous f32 in (token, layer, head, dim)
    | crc32 of payload u32

Generation uses the Philox counter-based generator, so traces are bitwise
reproducible from the seed across runs and platforms.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ModelShape

MAGIC = b"LKVT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIQ")
_NEEDLE_FIXED = struct.Struct("<IfH")
_CRC = struct.Struct("<I")


class TraceCorruptError(ValueError):
    """Trace file is truncated, has a bad magic, or fails its checksum."""


class UnsupportedVersionError(ValueError):
    """Trace file declares a format version this reader does not know."""


@dataclass(frozen=True)
class NeedleAnnotation:
    """A planted high-relevance token: its key is constructed to sit at a
    chosen cosine to the probe query (the final token's query)."""

    position: int
    target_cosine: float
    label: str = ""


@dataclass(eq=False)
class KvTrace:
    """Key/value/query tensors for a token sequence, shape (T, L, H, d)."""

    shape: ModelShape
    num_tokens: int
    keys: np.ndarray
    values: np.ndarray
    queries: np.ndarray
    needles: list[NeedleAnnotation] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self) -> None:
        expected = (
            self.num_tokens,
            self.shape.num_layers,
            self.shape.num_heads,
            self.shape.head_dim,
        )
        for name in ("keys", "values", "queries"):
            tensor = getattr(self, name)
            if tensor.shape != expected or tensor.dtype != np.float32:
                raise ValueError(
                    f"{name} must be float32 with shape {expected}, "
                    f"got {tensor.dtype} {tensor.shape}"
                )
        positions = [n.position for n in self.needles]
        if positions != sorted(set(positions)):
            raise ValueError("needle positions must be strictly increasing")
        if positions and positions[-1] >= self.num_tokens:
            raise ValueError("needle position out of range")

    def probe_query(self) -> np.ndarray:
        """Per-(layer, head) query of the final token, shape (L, H, d)."""
        return self.queries[self.num_tokens - 1]


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Gaussian draws scaled to unit norm: uniform directions on the sphere."""
    rows = rng.standard_normal((count, dim))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    # Zero-norm draws have probability zero but must not divide by zero.
    norms[norms == 0.0] = 1.0
    return rows / norms


def _needle_key(
    rng: np.random.Generator, probe: np.ndarray, cosine: float
) -> np.ndarray:
    """A unit vector at the requested cosine to the stored probe direction.

    Built in float64 from the float32 probe, so the cosine recomputed from
    the stored tensors stays within 1e-6 of the target.
    """
    probe64 = probe.astype(np.float64)
    unit_probe = probe64 / np.linalg.norm(probe64)
    if cosine >= 1.0:
        return probe.copy()
    if cosine <= -1.0:
        return -probe
    dim = probe.shape[0]
    if dim < 2:
        raise ValueError("head_dim must be >= 2 for a needle with |cosine| < 1")
    while True:
        draw = rng.standard_normal(dim)
        ortho = draw - np.dot(draw, unit_probe) * unit_probe
        norm = np.linalg.norm(ortho)
        if norm > 1e-9:
            break
    ortho /= norm
    mixed = cosine * unit_probe + np.sqrt(1.0 - cosine * cosine) * ortho
    return mixed.astype(np.float32)


def generate_trace(
    shape: ModelShape,
    num_tokens: int,
    needle_spec: list[tuple] | None = None,
    seed: int = 0,
) -> KvTrace:
    """Generate a trace of unit-norm background vectors plus planted needles.

    ``needle_spec`` entries are (position, target_cosine) or
    (position, target_cosine, label). Deterministic given the seed.
    """
    if num_tokens < 1:
        raise ValueError("num_tokens must be >= 1")
    needles: list[NeedleAnnotation] = []
    for entry in needle_spec or []:
        position, cosine = int(entry[0]), float(entry[1])
        label = str(entry[2]) if len(entry) > 2 else ""
        if not 0 <= position < num_tokens:
            raise ValueError(f"needle position {position} out of range [0, {num_tokens})")
        if not -1.0 <= cosine <= 1.0:
            raise ValueError(f"needle target_cosine {cosine} outside [-1, 1]")
        # Quantized to the file format's f32 so annotations round-trip exactly.
        needles.append(NeedleAnnotation(position, float(np.float32(cosine)), label))
    needles.sort(key=lambda n: n.position)
    if len({n.position for n in needles}) != len(needles):
        raise ValueError("duplicate needle positions")

    rng = np.random.Generator(np.random.Philox(key=seed))
    L, H, d = shape.num_layers, shape.num_heads, shape.head_dim
    slots = num_tokens * L * H
    tensors = {}
    for name in ("keys", "values", "queries"):
        rows = _unit_rows(rng, slots, d).astype(np.float32)
        tensors[name] = rows.reshape(num_tokens, L, H, d)

    probe = tensors["queries"][num_tokens - 1]  # (L, H, d), stored float32
    for needle in needles:
        for layer in range(L):
            for head in range(H):
                tensors["keys"][needle.position, layer, head] = _needle_key(
                    rng, probe[layer, head], needle.target_cosine
                )

    return KvTrace(
        shape=shape,
        num_tokens=num_tokens,
        keys=tensors["keys"],
        values=tensors["values"],
        queries=tensors["queries"],
        needles=needles,
        seed=seed,
    )


def save_trace(trace: KvTrace, path: str | Path) -> None:
    """Write a trace in the LKVT binary format (payload CRC32 at the end)."""
    shape = trace.shape
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        shape.num_layers,
        shape.num_heads,
        shape.head_dim,
        trace.num_tokens,
        len(trace.needles),
        trace.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for needle in trace.needles:
            label = needle.label.encode("utf-8")
            fh.write(_NEEDLE_FIXED.pack(needle.position, needle.target_cosine, len(label)))
            fh.write(label)
        crc = 0
        for tensor in (trace.keys, trace.values, trace.queries):
            payload = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
            crc = zlib.crc32(payload, crc)
            fh.write(payload)
        fh.write(_CRC.pack(crc))


def load_trace(path: str | Path) -> KvTrace:
    """Read an LKVT file; round-trips save_trace output bit-exactly."""
    data = Path(path).read_bytes()

    def take(count: int, offset: int) -> tuple[bytes, int]:
        if offset + count > len(data):
            raise TraceCorruptError(f"{path}: truncated at byte {offset}")
        return data[offset : offset + count], offset + count

    raw, offset = take(_HEADER.size, 0)
    magic, version, L, H, d, T, needle_count, seed = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise TraceCorruptError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}")

    needles = []
    for _ in range(needle_count):
        raw, offset = take(_NEEDLE_FIXED.size, offset)
        position, cosine, label_len = _NEEDLE_FIXED.unpack(raw)
        raw, offset = take(label_len, offset)
        needles.append(NeedleAnnotation(position, cosine, raw.decode("utf-8")))

    count = T * L * H * d
    tensors = []
    crc = 0
    for _ in range(3):
        raw, offset = take(count * 4, offset)
        crc = zlib.crc32(raw, crc)
        tensors.append(np.frombuffer(raw, dtype="<f4").reshape(T, L, H, d).copy())

    raw, offset = take(_CRC.size, offset)
    (stored_crc,) = _CRC.unpack(raw)
    if stored_crc != crc:
        raise TraceCorruptError(f"{path}: payload checksum mismatch")
    if offset != len(data):
        raise TraceCorruptError(f"{path}: {len(data) - offset} trailing bytes")

    return KvTrace(
        shape=ModelShape(L, H, d),
        num_tokens=T,
        keys=tensors[0],
        values=tensors[1],
        queries=tensors[2],
        needles=needles,
        seed=seed,
    )
