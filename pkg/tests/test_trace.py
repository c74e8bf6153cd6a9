from __future__ import annotations

import struct

import numpy as np
import pytest

from laserkv import (
    ModelShape,
    TraceCorruptError,
    UnsupportedVersionError,
    generate_trace,
    load_trace,
    save_trace,
)

SHAPE = ModelShape(2, 2, 8)


def cosine(a, b) -> float:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_background_vectors_unit_norm():
    trace = generate_trace(SHAPE, 64, seed=1)
    for tensor in (trace.keys, trace.values, trace.queries):
        norms = np.linalg.norm(tensor.astype(np.float64), axis=-1)
        assert np.allclose(norms, 1.0, atol=1e-6)
    assert trace.keys.shape == (64, 2, 2, 8)


def test_needle_at_cosine_one_equals_probe_direction():
    trace = generate_trace(SHAPE, 256, [(10, 1.0)], seed=3)
    probe = trace.probe_query()
    assert np.array_equal(trace.keys[10], probe)


def test_needle_cosine_within_tolerance():
    trace = generate_trace(SHAPE, 256, [(10, 0.6, "mid")], seed=7)
    probe = trace.probe_query()
    for layer in range(SHAPE.num_layers):
        for head in range(SHAPE.num_heads):
            measured = cosine(trace.keys[10, layer, head], probe[layer, head])
            assert abs(measured - 0.6) < 1e-6


@pytest.mark.parametrize("target", [-1.0, -0.5, 0.0, 0.3, 0.9])
def test_needle_cosine_range(target):
    trace = generate_trace(SHAPE, 64, [(5, target)], seed=11)
    probe = trace.probe_query()
    measured = cosine(trace.keys[5, 0, 1], probe[0, 1])
    assert abs(measured - target) < 1e-6


def test_generate_rejects_bad_needles():
    with pytest.raises(ValueError):
        generate_trace(SHAPE, 64, [(64, 0.5)], seed=0)  # out of range
    with pytest.raises(ValueError):
        generate_trace(SHAPE, 64, [(3, 0.5), (3, 0.7)], seed=0)  # duplicate
    with pytest.raises(ValueError):
        generate_trace(SHAPE, 64, [(3, 1.5)], seed=0)  # cosine out of range


def test_generation_deterministic():
    a = generate_trace(SHAPE, 128, [(9, 0.8), (60, -0.2)], seed=99)
    b = generate_trace(SHAPE, 128, [(9, 0.8), (60, -0.2)], seed=99)
    assert a.keys.tobytes() == b.keys.tobytes()
    assert a.values.tobytes() == b.values.tobytes()
    assert a.queries.tobytes() == b.queries.tobytes()
    c = generate_trace(SHAPE, 128, [(9, 0.8), (60, -0.2)], seed=100)
    assert a.keys.tobytes() != c.keys.tobytes()


def test_roundtrip_bit_exact(tmp_path, rng):
    for i in range(100):
        shape = ModelShape(
            int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(2, 9))
        )
        tokens = int(rng.integers(1, 40))
        needles = []
        if tokens > 2:
            needles = [(int(rng.integers(0, tokens)), float(rng.uniform(-1, 1)), "n")]
        trace = generate_trace(shape, tokens, needles, seed=i)
        path = tmp_path / f"t{i}.lkvt"
        save_trace(trace, path)
        loaded = load_trace(path)
        assert loaded.shape == trace.shape
        assert loaded.seed == trace.seed
        assert loaded.keys.tobytes() == trace.keys.tobytes()
        assert loaded.values.tobytes() == trace.values.tobytes()
        assert loaded.queries.tobytes() == trace.queries.tobytes()
        assert loaded.needles == trace.needles


def test_load_truncated_file(tmp_path):
    path = tmp_path / "t.lkvt"
    trace = generate_trace(SHAPE, 16, seed=0)
    save_trace(trace, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(TraceCorruptError):
        load_trace(path)


def test_load_corrupted_payload(tmp_path):
    path = tmp_path / "t.lkvt"
    save_trace(generate_trace(SHAPE, 16, seed=0), path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(TraceCorruptError):
        load_trace(path)


def test_load_unsupported_version(tmp_path):
    path = tmp_path / "t.lkvt"
    save_trace(generate_trace(SHAPE, 16, seed=0), path)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersionError):
        load_trace(path)


def test_load_bad_magic(tmp_path):
    path = tmp_path / "t.lkvt"
    save_trace(generate_trace(SHAPE, 16, seed=0), path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(TraceCorruptError):
        load_trace(path)
