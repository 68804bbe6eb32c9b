import numpy as np
import pytest

from lesplat.benchmark import (
    CLASS_NAMES,
    CODEBOOK_SIZE,
    CROSS_CLASS_COS,
    DISTRACTOR_COS,
    EASY_POS_COS,
    HELPING_COS,
    HELPING_PHRASES,
    DISTRACTOR_PHRASES,
    PERTURBED_POS_COS,
    build_benchmark,
    render_index_targets,
    run_benchmark,
)
from lesplat.train import IGNORE_INDEX, TrainConfig, train_semantics


class TestConstruction:
    def test_scene_population(self):
        setup = build_benchmark(0)
        assert len(setup.scene) == 190  # 3 classes x 50 + backdrop
        assert np.bincount(setup.class_labels).tolist() == [50, 50, 50, 40]

    def test_embedding_geometry_is_exact(self):
        setup = build_benchmark(3)
        queries = np.stack([setup.table.lookup(n) for n in CLASS_NAMES])
        # unit class vectors with pairwise cosine exactly at the bound
        np.testing.assert_allclose(np.linalg.norm(queries, axis=1), 1.0, atol=1e-12)
        gram = queries @ queries.T
        off_diag = gram[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off_diag, CROSS_CLASS_COS, atol=1e-9)

        feats = setup.gaussian_features
        labels = setup.class_labels
        for j in range(3):
            class_feats = feats[labels == j]
            cos_to_query = class_feats @ queries[j]
            values = np.unique(np.round(cos_to_query, 9))
            np.testing.assert_allclose(
                values, sorted([PERTURBED_POS_COS, EASY_POS_COS]), atol=1e-9
            )
            helper = setup.table.lookup(HELPING_PHRASES[j])
            perturbed = class_feats[np.argmin(cos_to_query)]
            assert helper @ perturbed == pytest.approx(HELPING_COS, abs=1e-9)
            distractor = setup.table.lookup(DISTRACTOR_PHRASES[j])
            assert distractor @ perturbed == pytest.approx(DISTRACTOR_COS, abs=1e-9)

    def test_codebook_recovers_prototypes_exactly(self):
        setup = build_benchmark(1)
        # features are noiseless prototypes, so assignment error is zero
        sims = setup.gaussian_features @ setup.codebook.entries.T
        assert np.allclose(np.max(sims, axis=1), 1.0, atol=1e-9)
        assert np.bincount(setup.code_targets, minlength=CODEBOOK_SIZE).min() > 0

    def test_query_specs_validate(self):
        setup = build_benchmark(2)
        for spec in setup.query_specs:
            assert 1 <= len(spec.helping_positives) <= 4
            assert 4 <= len(spec.canonicals) <= 6

    def test_targets_supervise_most_covered_pixels(self):
        setup = build_benchmark(4)
        cam = setup.train_cameras[0]
        target = render_index_targets(setup.scene, cam, setup.code_targets, CODEBOOK_SIZE)
        assert (target != IGNORE_INDEX).sum() > 0.3 * target.size


class TestTraining:
    def test_trace_non_increasing_within_transients(self):
        setup = build_benchmark(11)
        targets = [
            (cam, render_index_targets(setup.scene, cam, setup.code_targets, CODEBOOK_SIZE))
            for cam in setup.train_cameras
        ]
        cfg = TrainConfig(epochs=300, learning_rate=8.0, seed=11)
        result = train_semantics(setup.scene, targets, CODEBOOK_SIZE, cfg)
        totals = [row["total"] for row in result.trace]
        for prev, cur in zip(totals, totals[1:]):
            assert cur <= prev * 1.05


class TestOrdering:
    def test_single_seed_run(self):
        res = run_benchmark(13, epochs=400)
        assert res.per_gaussian_accuracy >= 0.95
        m = {k: r.miou for k, r in res.reports.items()}
        assert m["full"] > m["no_helping"] > m["predefined"]

    def test_summary_has_all_variants(self):
        res = run_benchmark(13, epochs=60)
        doc = res.summary_dict()
        assert set(doc["variants"]) == {"full", "no_helping", "predefined"}
