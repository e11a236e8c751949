"""Tests for the synthetic placement benchmark and its report schema."""

import numpy as np
import pytest

from ctxpaste.augment import AugmentationConfig
from ctxpaste.geometry import BoundingBox
from ctxpaste.scorer import TrainParams
from ctxpaste.synth import (
    REPORT_KEYS,
    RegionRule,
    SynthCategory,
    SynthSpec,
    default_categories,
    generate_heldout_scenes,
    generate_synthetic_dataset,
    rule_consistency,
    run_benchmark,
    spec_hash,
    validate_report,
)

PAD_COLOR = (30, 30, 30)


def small_spec(**overrides):
    kwargs = dict(
        image_size=220,
        n_images=10,
        instances_per_image=2,
        seed=0,
        heldout_context_images=4,
        heldout_random_images=8,
    )
    kwargs.update(overrides)
    return SynthSpec(**kwargs)


def two_rules(gap=False, partial=False):
    top_hi = 0.4 if gap else 0.5
    bot_hi = 0.9 if partial else 1.0
    a = SynthCategory(
        name="boxy",
        shape="rectangle",
        color=(120, 110, 40),
        rule=RegionRule(name="top", y_range=(0.0, top_hi), color=(96, 64, 64)),
    )
    b = SynthCategory(
        name="blobby",
        shape="ellipse",
        color=(40, 115, 100),
        rule=RegionRule(name="bottom", y_range=(0.5, bot_hi), color=(64, 64, 96)),
    )
    return (a, b)


class TestSynthSpec:
    def test_defaults(self):
        spec = SynthSpec()
        assert [c.name for c in spec.categories] == ["boxy", "blobby"]
        assert spec.image_size == 300

    def test_rules_must_partition(self):
        with pytest.raises(ValueError, match="partition"):
            SynthSpec(categories=two_rules(gap=True))

    def test_rules_must_cover(self):
        with pytest.raises(ValueError, match="cover"):
            SynthSpec(categories=two_rules(partial=True))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"pad_factor": 1.0},
            {"box_side_range": (3, 10)},
            {"box_side_range": (30, 20)},
            {"image_size": 120},  # bands too small for the largest pad
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            SynthSpec(**kwargs)

    def test_category_lookup(self):
        spec = SynthSpec()
        assert spec.category("boxy").shape == "rectangle"
        with pytest.raises(KeyError, match="unknown category"):
            spec.category("sprocket")

    def test_unknown_shape_rejected(self):
        with pytest.raises(ValueError, match="unknown shape"):
            SynthCategory(
                name="tri",
                shape="triangle",
                color=(1, 2, 3),
                rule=default_categories()[0].rule,
            )

    def test_spec_hash(self):
        a, b = SynthSpec(), SynthSpec()
        assert spec_hash(a) == spec_hash(b)
        assert len(spec_hash(a)) == 16
        int(spec_hash(a), 16)  # hex digest prefix
        assert spec_hash(SynthSpec(seed=1)) != spec_hash(a)
        assert spec_hash(SynthSpec(n_images=41)) != spec_hash(a)


class TestSceneGeneration:
    def setup_method(self):
        self.spec = small_spec()
        self.records = generate_synthetic_dataset(
            self.spec, np.random.default_rng([0, 1])
        )

    def test_counts_and_ids(self):
        assert len(self.records) == self.spec.n_images
        assert [r.image_id for r in self.records] == [
            f"train_{i:04d}" for i in range(self.spec.n_images)
        ]
        for rec in self.records:
            assert len(rec.annotation.objects) == self.spec.instances_per_image
            assert len(rec.masks) == self.spec.instances_per_image

    def test_all_pixels_below_128(self):
        for rec in self.records:
            assert rec.image.max() < 128

    def test_centers_obey_region_rules(self):
        for rec in self.records:
            for obj in rec.annotation.objects:
                rule = self.spec.category(obj.category).rule
                _, cy = obj.box.center
                assert rule.contains_center(cy, self.spec.image_size)

    def test_masks_are_exact_color_matches(self):
        # Object colors cannot occur in noisy bands or pads, so inside each
        # box the mask is exactly the set of pixels holding the category
        # color.
        for rec in self.records:
            for obj, mask in zip(rec.annotation.objects, rec.masks):
                color = self.spec.category(obj.category).color
                x0, y0, x1, y1 = obj.box.round()
                sub = rec.image[y0:y1, x0:x1]
                match = (sub == color).all(axis=2)
                np.testing.assert_array_equal(match, mask[y0:y1, x0:x1])
                outside = mask.copy()
                outside[y0:y1, x0:x1] = False
                assert not outside.any()
                assert mask.sum() > 0

    def test_mask_tight_boxes_match_annotations(self):
        for rec in self.records:
            for obj, mask in zip(rec.annotation.objects, rec.masks):
                ys, xs = np.nonzero(mask)
                assert (
                    int(xs.min()),
                    int(ys.min()),
                    int(xs.max()) + 1,
                    int(ys.max()) + 1,
                ) == obj.box.round()

    def test_pads_surround_objects(self):
        for rec in self.records:
            for obj in rec.annotation.objects:
                x0, y0, x1, y1 = obj.box.round()
                cy = (y0 + y1) // 2
                cx = (x0 + x1) // 2
                assert tuple(rec.image[cy, x0 - 2]) == PAD_COLOR
                assert tuple(rec.image[cy, x1 + 1]) == PAD_COLOR
                assert tuple(rec.image[y0 - 2, cx]) == PAD_COLOR
                assert tuple(rec.image[y1 + 1, cx]) == PAD_COLOR

    def test_deterministic(self):
        again = generate_synthetic_dataset(self.spec, np.random.default_rng([0, 1]))
        for a, b in zip(self.records, again):
            np.testing.assert_array_equal(a.image, b.image)
            assert a.annotation == b.annotation


class TestHeldoutScenes:
    def setup_method(self):
        self.spec = small_spec()
        self.scenes = generate_heldout_scenes(
            self.spec, np.random.default_rng([0, 2]), 5, "held"
        )

    def test_empty_but_padded(self):
        n_pads = len(self.spec.categories) * self.spec.heldout_pads_per_region
        lo = self.spec.box_side_range[0]
        min_pad_side = int(np.ceil(lo * self.spec.pad_factor))
        for scene in self.scenes:
            assert scene.annotation.objects == ()
            assert scene.masks is None
            pad_pixels = (scene.image == PAD_COLOR).all(axis=2)
            assert pad_pixels.sum() >= n_pads * min_pad_side**2
            half = self.spec.image_size // 2
            assert pad_pixels[:half].any() and pad_pixels[half:].any()

    def test_ids_use_prefix(self):
        assert [s.image_id for s in self.scenes] == [
            f"held_{i:04d}" for i in range(5)
        ]


class TestRuleConsistency:
    def setup_method(self):
        self.spec = small_spec()
        s = self.spec.image_size
        # Centered in the correct band for each category.
        self.top_box = BoundingBox(50, 20, 90, 60)
        self.bottom_box = BoundingBox(50, s - 60, 90, s - 20)

    def test_all_consistent(self):
        placements = [("boxy", self.top_box), ("blobby", self.bottom_box)] * 3
        assert rule_consistency(placements, self.spec) == 1.0

    def test_none_consistent(self):
        placements = [("boxy", self.bottom_box), ("blobby", self.top_box)] * 2
        assert rule_consistency(placements, self.spec) == 0.0

    def test_half_consistent(self):
        placements = [
            ("boxy", self.top_box),
            ("boxy", self.top_box),
            ("boxy", self.top_box),
            ("boxy", self.bottom_box),
            ("blobby", self.top_box),
            ("blobby", self.top_box),
        ]
        assert rule_consistency(placements, self.spec) == 0.5

    def test_unknown_category(self):
        with pytest.raises(KeyError, match="unknown category"):
            rule_consistency([("sprocket", self.top_box)], self.spec)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no placements"):
            rule_consistency([], self.spec)

    def test_band_boundaries(self):
        top, bottom = (c.rule for c in self.spec.categories)
        s = self.spec.image_size
        # Bands are half-open at the seam; the image bottom edge is closed.
        assert top.contains_center(0.0, s)
        assert not top.contains_center(s / 2, s)
        assert bottom.contains_center(s / 2, s)
        assert bottom.contains_center(float(s), s)


class TestValidateReport:
    def good(self):
        return {
            "context_consistency": 0.95,
            "random_consistency": 0.5,
            "scorer_val_accuracy": 0.9,
            "seed": 0,
            "spec_hash": "ab12" * 4,
        }

    def test_accepts_good_report(self):
        report = self.good()
        assert validate_report(report) is report
        assert set(REPORT_KEYS) == set(report)

    def test_rejects_missing_and_extra_keys(self):
        short = self.good()
        del short["seed"]
        with pytest.raises(ValueError, match="report keys"):
            validate_report(short)
        extra = self.good()
        extra["bonus"] = 1
        with pytest.raises(ValueError, match="report keys"):
            validate_report(extra)

    @pytest.mark.parametrize("value", [1.5, -0.1, "high", None])
    def test_rejects_bad_fractions(self, value):
        bad = self.good()
        bad["context_consistency"] = value
        with pytest.raises(ValueError, match="not a fraction"):
            validate_report(bad)

    def test_rejects_bad_seed_and_hash(self):
        bad = self.good()
        bad["seed"] = 1.5
        with pytest.raises(ValueError, match="not an integer"):
            validate_report(bad)
        bad = self.good()
        bad["spec_hash"] = 99
        with pytest.raises(ValueError, match="not a string"):
            validate_report(bad)


class TestRunBenchmark:
    def test_small_run_is_internally_consistent(self):
        spec = small_spec()
        result = run_benchmark(
            spec,
            cfg=AugmentationConfig(seed=spec.seed, candidates_per_image=80),
            train_params=TrainParams(seed=spec.seed, max_epochs=30),
        )
        report = validate_report(result.report)
        assert report["seed"] == spec.seed
        assert report["spec_hash"] == spec_hash(spec)
        assert len(result.context_records) == spec.heldout_context_images
        assert len(result.random_records) == spec.heldout_random_images
        assert result.random_placements  # forced coin: pastes always happen
        for rec in result.random_records:
            assert 1 <= len(rec.provenance["pastes"]) <= 3
        # Reported consistencies equal a recomputation from the placements.
        assert report["random_consistency"] == rule_consistency(
            result.random_placements, spec
        )
        if result.context_placements:
            assert report["context_consistency"] == rule_consistency(
                result.context_placements, spec
            )
        assert 0.0 <= report["scorer_val_accuracy"] <= 1.0
