from __future__ import annotations

import numpy as np
import pytest

from laserkv import ModelShape, exact_scores, generate_trace

from conftest import make_trace, unit
from reference import dense_attention_scores


def random_instance(rng, layers=2, heads=2, dim=4, tokens=24):
    trace = generate_trace(ModelShape(layers, heads, dim), tokens, seed=int(rng.integers(2**32)))
    count = int(rng.integers(1, tokens + 1))
    candidates = sorted(rng.choice(tokens, size=count, replace=False).tolist())
    # Keep windows well-formed: rows at/after the first candidate.
    lo = candidates[0]
    rows = sorted(set(rng.integers(lo, tokens, size=int(rng.integers(1, 4))).tolist()))
    return trace, candidates, rows


def test_singleton_softmax_scores_layers_times_heads():
    trace = generate_trace(ModelShape(3, 2, 8), 16, seed=5)
    result = exact_scores(trace, candidates=[4], query_rows=[10])
    assert result.scores.shape == (1,)
    assert result.scores[0] == pytest.approx(3 * 2 * 1.0, abs=1e-12)


def test_identical_keys_share_scores():
    key = unit([1.0, 2.0, -1.0, 0.5])
    keys = np.stack([np.broadcast_to(key, (1, 1, 4))] * 3)
    queries = np.stack([np.broadcast_to(unit([0.3, -1.0, 0.2, 0.9]), (1, 1, 4))] * 3)
    trace = make_trace(keys, queries)
    result = exact_scores(trace, candidates=[0, 1], query_rows=[2])
    assert result.scores[0] == pytest.approx(result.scores[1], rel=1e-12)


def test_matches_dense_reference(rng):
    for _ in range(50):
        trace, candidates, rows = random_instance(rng)
        got = exact_scores(trace, candidates, rows).scores
        expected = dense_attention_scores(trace, candidates, rows)
        assert np.allclose(got, expected, rtol=1e-6, atol=1e-12)


def test_mass_conservation(rng):
    for _ in range(50):
        trace, candidates, rows = random_instance(rng, layers=2, heads=3, dim=6)
        total = exact_scores(trace, candidates, rows).scores.sum()
        expected = trace.shape.num_layers * trace.shape.num_heads * len(rows)
        assert total == pytest.approx(expected, rel=1e-5)


def test_future_candidate_scores_exactly_zero():
    trace = generate_trace(ModelShape(2, 2, 4), 12, seed=2)
    result = exact_scores(trace, candidates=[1, 3, 11], query_rows=[5, 6])
    assert result.scores[2] == 0.0
    assert result.scores[0] > 0.0


def test_query_row_with_no_unmasked_candidates_rejected():
    trace = generate_trace(ModelShape(1, 1, 4), 12, seed=2)
    with pytest.raises(ValueError, match="no unmasked"):
        exact_scores(trace, candidates=[8, 9], query_rows=[3])


def test_rejects_empty_inputs():
    trace = generate_trace(ModelShape(1, 1, 4), 8, seed=0)
    with pytest.raises(ValueError):
        exact_scores(trace, [], [4])
    with pytest.raises(ValueError):
        exact_scores(trace, [1], [])
    with pytest.raises(ValueError):
        exact_scores(trace, [99], [4])


def test_top1_invariant_under_query_scaling(rng):
    # With a single query row and one (layer, head), the aggregate argmax is
    # that row's argmax, which positive scaling must preserve.
    for scale in (0.1, 3.0, 42.0):
        for _ in range(20):
            trace, candidates, _ = random_instance(rng, layers=1, heads=1, dim=5)
            row = [trace.num_tokens - 1]
            base = exact_scores(trace, candidates, row).scores
            scaled_trace = make_trace(
                trace.keys, trace.queries * np.float32(scale), trace.values
            )
            scaled = exact_scores(scaled_trace, candidates, row).scores
            assert int(np.argmax(base)) == int(np.argmax(scaled))


def test_bitwise_deterministic(rng):
    trace, candidates, rows = random_instance(rng)
    a = exact_scores(trace, candidates, rows).scores
    b = exact_scores(trace, candidates, rows).scores
    assert a.tobytes() == b.tobytes()
