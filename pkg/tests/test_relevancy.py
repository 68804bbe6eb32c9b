import numpy as np
import pytest

from lesplat.quantize import Codebook
from lesplat.relevancy import (
    PREDEFINED_CANONICALS,
    EmbeddingTable,
    FeatureMap,
    QuerySpec,
    feature_map,
    relevancy_score,
    score_query,
    segment,
)
from lesplat.render import SemanticDistributionMap

E_OVER_1PE = np.e / (1.0 + np.e)  # 0.731058...
INV_1PE = 1.0 / (1.0 + np.e)  # 0.268941...


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fmap_from(values):
    values = np.asarray(values, dtype=np.float64)
    return FeatureMap(width=values.shape[1], height=values.shape[0], values=values)


def brute_force_relevancy(values, positives, canonicals):
    """Independent double loop over (positive, canonical) pairs: max then min."""
    h, w, _ = values.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            f = values[y, x]
            norm = np.linalg.norm(f)
            if norm < 1e-12:
                out[y, x] = 0.5
                continue
            f = f / norm
            sigma_pos = max(float(np.dot(f, p)) for p in positives)
            best = None
            for c in canonicals:
                sigma_c = float(np.dot(f, c))
                ratio = np.exp(sigma_pos) / (np.exp(sigma_c) + np.exp(sigma_pos))
                best = ratio if best is None else min(best, ratio)
            out[y, x] = best
    return out


class TestEmbeddingTable:
    def test_rejects_duplicate_phrases(self):
        with pytest.raises(ValueError, match="unique"):
            EmbeddingTable(phrases=("a", "a"), vectors=np.eye(2))

    def test_rejects_non_unit_vector(self):
        with pytest.raises(ValueError, match="unit"):
            EmbeddingTable(phrases=("a",), vectors=np.array([[0.5, 0.0]]))

    def test_lookup(self):
        t = EmbeddingTable(phrases=("a", "b"), vectors=np.eye(2))
        np.testing.assert_array_equal(t.lookup("b"), [0.0, 1.0])
        with pytest.raises(KeyError):
            t.lookup("c")

    def test_predefined_canonical_phrases(self):
        assert PREDEFINED_CANONICALS == ("object", "things", "stuff", "texture")


class TestQuerySpec:
    def test_valid_spec(self):
        spec = QuerySpec("car", ("wheels",), ("road", "sky", "tree", "wall"))
        assert spec.positives() == ("car", "wheels")

    @pytest.mark.parametrize("helping", [(), ("a", "b", "c", "d", "e")])
    def test_helping_count_range(self, helping):
        with pytest.raises(ValueError, match="helping"):
            QuerySpec("car", helping, ("a", "b", "c", "d"))

    @pytest.mark.parametrize("n", [3, 7])
    def test_canonical_count_range(self, n):
        with pytest.raises(ValueError, match="canonicals"):
            QuerySpec("car", ("wheels",), tuple(f"c{i}" for i in range(n)))

    def test_rejects_phrase_on_both_sides(self):
        with pytest.raises(ValueError, match="both"):
            QuerySpec("car", ("road",), ("road", "sky", "tree", "wall"))

    def test_json_round_trip(self):
        spec = QuerySpec("car", ("wheels", "bumper"), ("road", "sky", "tree", "wall", "sign"))
        assert QuerySpec.from_json_dict(spec.to_json_dict()) == spec


class TestFeatureMap:
    def test_one_hot_distribution_selects_codeword(self):
        cb = Codebook(entries=np.eye(4))
        values = np.zeros((1, 2, 4))
        values[0, 0, 2] = 1.0
        m = SemanticDistributionMap(width=2, height=1, k=4, values=values)
        f = feature_map(m, cb)
        np.testing.assert_array_equal(f.values[0, 0], cb.entries[2])
        np.testing.assert_array_equal(f.values[0, 1], np.zeros(4))

    def test_uniform_over_two_orthogonal_codewords(self):
        cb = Codebook(entries=np.eye(2))
        values = np.full((1, 1, 2), 0.5)
        m = SemanticDistributionMap(width=1, height=1, k=2, values=values)
        f = feature_map(m, cb)
        np.testing.assert_allclose(f.values[0, 0], 0.5 * (cb.entries[0] + cb.entries[1]))

    def test_rejects_k_mismatch(self):
        cb = Codebook(entries=np.eye(3))
        m = SemanticDistributionMap(width=1, height=1, k=2, values=np.zeros((1, 1, 2)))
        with pytest.raises(ValueError, match="k="):
            feature_map(m, cb)


class TestRelevancyScore:
    def test_symmetric_similarities_give_exactly_half(self):
        # feature equidistant from the query and every canonical
        d = 4
        f = np.zeros((1, 1, d))
        f[0, 0, 0] = 1.0
        pos = np.array([[0.0, 1.0, 0.0, 0.0]])
        canon = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
        r = relevancy_score(fmap_from(f), pos, canon)
        assert r.scores[0, 0] == 0.5

    def test_query_aligned_pixel_vs_orthogonal_canonical(self):
        f = np.zeros((1, 1, 3))
        f[0, 0, 0] = 2.5  # normalization makes magnitude irrelevant
        pos = np.array([[1.0, 0.0, 0.0]])
        canon = np.array([[0.0, 1.0, 0.0]])
        r = relevancy_score(fmap_from(f), pos, canon)
        assert r.scores[0, 0] == pytest.approx(E_OVER_1PE, abs=1e-12)

    def test_canonical_aligned_pixel(self):
        f = np.zeros((1, 1, 3))
        f[0, 0, 1] = 1.0
        pos = np.array([[1.0, 0.0, 0.0]])
        canon = np.array([[0.0, 1.0, 0.0]])
        r = relevancy_score(fmap_from(f), pos, canon)
        assert r.scores[0, 0] == pytest.approx(INV_1PE, abs=1e-12)

    def test_zero_evidence_pixel_scores_half_and_is_flagged(self):
        f = np.zeros((1, 2, 3))
        f[0, 1, 0] = 1.0
        pos = np.array([[1.0, 0.0, 0.0]])
        canon = np.array([[0.0, 1.0, 0.0]])
        r = relevancy_score(fmap_from(f), pos, canon)
        assert r.scores[0, 0] == 0.5 and not r.evidence[0, 0]
        assert r.evidence[0, 1]

    def test_scores_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(6, 6, 8))
        r = relevancy_score(fmap_from(f), unit_rows(rng, 3, 8), unit_rows(rng, 4, 8))
        assert np.all(r.scores > 0.0) and np.all(r.scores < 1.0)

    def test_matches_brute_force_double_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(3):
            f = rng.normal(size=(8, 8, 6))
            f[0, 0] = 0.0  # include a zero-evidence pixel
            pos = unit_rows(rng, 2, 6)
            canon = unit_rows(rng, 5, 6)
            r = relevancy_score(fmap_from(f), pos, canon)
            expected = brute_force_relevancy(f, pos, canon)
            assert np.max(np.abs(r.scores - expected)) < 1e-9

    def test_monotone_in_positive_similarity(self):
        rng = np.random.default_rng(2)
        canon = unit_rows(rng, 4, 5)
        base = unit_rows(rng, 1, 5)[0]
        target = unit_rows(rng, 1, 5)[0]
        f = np.zeros((1, 1, 5))
        f[0, 0] = target
        scores = []
        for blend in (0.0, 0.3, 0.6, 1.0):
            p = (1 - blend) * base + blend * target
            p = p / np.linalg.norm(p)
            scores.append(relevancy_score(fmap_from(f), p[None, :], canon).scores[0, 0])
        assert all(b > a for a, b in zip(scores, scores[1:]))

    def test_adding_canonical_never_increases_scores(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(5, 5, 6))
        pos = unit_rows(rng, 2, 6)
        canon = unit_rows(rng, 4, 6)
        extra = np.concatenate([canon, unit_rows(rng, 1, 6)])
        base = relevancy_score(fmap_from(f), pos, canon).scores
        more = relevancy_score(fmap_from(f), pos, extra).scores
        assert np.all(more <= base + 1e-15)

    def test_adding_helping_positive_never_decreases_scores(self):
        rng = np.random.default_rng(4)
        f = rng.normal(size=(5, 5, 6))
        pos = unit_rows(rng, 1, 6)
        extra = np.concatenate([pos, unit_rows(rng, 1, 6)])
        canon = unit_rows(rng, 4, 6)
        base = relevancy_score(fmap_from(f), pos, canon).scores
        more = relevancy_score(fmap_from(f), extra, canon).scores
        assert np.all(more >= base - 1e-15)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(5)
        d = 7
        f = rng.normal(size=(4, 4, d))
        pos = unit_rows(rng, 2, d)
        canon = unit_rows(rng, 4, d)
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        base = relevancy_score(fmap_from(f), pos, canon).scores
        rotated = relevancy_score(fmap_from(f @ q.T), pos @ q.T, canon @ q.T).scores
        np.testing.assert_allclose(rotated, base, atol=1e-9)

    def test_rejects_empty_positive_set(self):
        f = np.ones((1, 1, 3))
        with pytest.raises(ValueError, match="non-empty"):
            relevancy_score(fmap_from(f), np.zeros((0, 3)), np.eye(3))

    def test_score_query_uses_table_lookups(self):
        rng = np.random.default_rng(6)
        vectors = unit_rows(rng, 6, 8)
        table = EmbeddingTable(
            phrases=("car", "wheels", "road", "sky", "tree", "wall"), vectors=vectors
        )
        spec = QuerySpec("car", ("wheels",), ("road", "sky", "tree", "wall"))
        f = rng.normal(size=(3, 3, 8))
        via_spec = score_query(fmap_from(f), spec, table)
        direct = relevancy_score(fmap_from(f), vectors[:2], vectors[2:])
        np.testing.assert_array_equal(via_spec.scores, direct.scores)


class TestSegment:
    def test_all_half_scores_give_empty_mask(self):
        r = relevancy_score(
            fmap_from(np.zeros((2, 2, 3))), np.eye(3)[:1], np.eye(3)[1:2]
        )
        assert not segment(r, 0.5).mask.any()

    def test_strict_threshold(self):
        from lesplat.relevancy import RelevancyMap

        r = RelevancyMap(width=2, height=1, scores=np.array([[0.3, 0.7]]))
        np.testing.assert_array_equal(segment(r, 0.5).mask, [[False, True]])

    def test_mask_count_matches_brute_force(self):
        rng = np.random.default_rng(7)
        from lesplat.relevancy import RelevancyMap

        scores = rng.uniform(0, 1, size=(9, 9))
        r = RelevancyMap(width=9, height=9, scores=scores)
        mask = segment(r, 0.4).mask
        assert mask.sum() == sum(1 for v in scores.ravel() if v > 0.4)

    def test_rejects_out_of_range_threshold(self):
        from lesplat.relevancy import RelevancyMap

        r = RelevancyMap(width=1, height=1, scores=np.array([[0.5]]))
        with pytest.raises(ValueError):
            segment(r, 1.0)
