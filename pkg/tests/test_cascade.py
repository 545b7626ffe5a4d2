import numpy as np
import pytest

from zsas.backends.base import Candidate, SegmenterBackend
from zsas.backends.synthetic import NoiseBlob, SyntheticSegmenter
from zsas.cascade import finalize_map, run_cascade, run_stage
from zsas.errors import BackendError, ConfigError, DataError
from zsas.types import (
    BinaryMask,
    FeatureGrid,
    PipelineConfig,
    PromptSet,
    ScoreGrid,
)
from test_backends import pos, neg, simple_scene


class StubSegmenter(SegmenterBackend):
    """Fixed candidate list; counts decode calls; optionally raises."""

    def __init__(self, candidates=None, fail_on_call=None, size=16, logit=4):
        self.name = "stub"
        self.working_resolution = size
        self.logit_resolution = logit
        self.feature_dims = (1, 4, 4)
        self._candidates = candidates
        self._fail_on_call = fail_on_call
        self.decode_calls = 0

    def encode(self, image_ref):
        return FeatureGrid(np.zeros(self.feature_dims, dtype=np.float32))

    def _mk(self, score, fill=True):
        mask = np.zeros((self.working_resolution,) * 2, dtype=bool)
        if fill:
            mask[4:8, 4:8] = True
        return Candidate(
            BinaryMask(mask),
            ScoreGrid(np.zeros((self.logit_resolution,) * 2, dtype=np.float32)),
            score,
        )

    def decode(self, features, prompts, multimask):
        self.decode_calls += 1
        if self._fail_on_call == self.decode_calls:
            raise BackendError("simulated failure")
        if self._candidates is not None:
            return self._candidates
        return [self._mk(0.7, fill=False if multimask else True)]


def scene_fixture(noise_blobs=()):
    scene = simple_scene(noise_blobs)
    segmenter = SyntheticSegmenter([scene], feature_size=16)
    features = segmenter.encode("t")
    return scene, segmenter, features


class TestRunStage:
    def test_single_positive_region_recovered(self):
        scene, segmenter, features = scene_fixture()
        mask, logit, score = run_stage(segmenter, features, PromptSet((pos(10, 10),)), False)
        np.testing.assert_array_equal(mask.values, scene.labels == 1)
        assert logit.values.shape == (segmenter.logit_resolution,) * 2

    def test_negative_subtracts_region(self):
        scene, segmenter, features = scene_fixture()
        prompts = PromptSet((pos(10, 10), pos(45, 45), neg(50, 50)))
        mask, _, _ = run_stage(segmenter, features, prompts, False)
        np.testing.assert_array_equal(mask.values, scene.labels == 1)

    def test_multimask_highest_score_first_tie(self):
        stub = StubSegmenter()
        cands = [stub._mk(0.2), stub._mk(0.9), stub._mk(0.9)]
        cands[1] = Candidate(cands[1].mask, cands[1].logit, 0.9)
        marker = np.zeros((16, 16), dtype=bool)
        marker[0, 0] = True
        cands[1] = Candidate(BinaryMask(marker), cands[1].logit, 0.9)
        stub._candidates = cands
        mask, _, score = run_stage(stub, None, PromptSet((pos(1, 1),)), True)
        assert score == 0.9
        assert mask.values[0, 0]  # candidate index 1, not 2

    def test_requires_positive(self):
        stub = StubSegmenter()
        with pytest.raises(DataError):
            run_stage(stub, None, PromptSet((neg(1, 1),)), False)

    def test_empty_candidate_list_is_backend_error(self):
        stub = StubSegmenter(candidates=[])
        with pytest.raises(BackendError):
            run_stage(stub, None, PromptSet((pos(1, 1),)), False)


class TestRunCascade:
    def test_depth_gating_shapes(self):
        _, segmenter, features = scene_fixture()
        prompts = PromptSet((pos(10, 10),))
        for depth in (1, 2, 3):
            trace = run_cascade(
                segmenter, features, prompts, PipelineConfig(cascade_depth=depth)
            )
            assert trace.depth == depth
            assert len(trace.stage_logits) == depth
            assert len(trace.stage_scores) == depth
            assert (trace.derived_box is not None) == (depth == 3)
            assert not trace.degraded

    def test_rejects_prewired_prompts(self):
        _, segmenter, features = scene_fixture()
        logit = ScoreGrid(np.zeros((64, 64), dtype=np.float32))
        with pytest.raises(DataError):
            run_cascade(
                segmenter, features, PromptSet((pos(1, 1),), dense_logit=logit), PipelineConfig()
            )

    def test_noise_removed_and_iou_improves(self):
        # Far-away large noise: present at stage 1, still endorsed by the
        # stage-1 logit, excluded by the stage-3 box.
        scene, segmenter, features = scene_fixture([NoiseBlob(1, 0, 48, 16, 16)])
        truth = (scene.labels == 1)
        prompts = PromptSet((pos(10, 10),))
        trace = run_cascade(segmenter, features, prompts, PipelineConfig(cascade_depth=3))

        def iou(mask):
            inter = (mask.values & truth).sum()
            return inter / (mask.values | truth).sum()

        assert trace.stage_masks[0].values[4, 52]  # noise present at stage 1
        assert not trace.stage_masks[2].values[4, 52]  # gone at stage 3
        assert iou(trace.stage_masks[2]) > iou(trace.stage_masks[0])
        np.testing.assert_array_equal(trace.stage_masks[2].values, truth)

    def test_stage3_mask_inside_box(self):
        scene, segmenter, features = scene_fixture([NoiseBlob(1, 0, 48, 16, 16)])
        trace = run_cascade(
            segmenter, features, PromptSet((pos(10, 10),)), PipelineConfig(cascade_depth=3)
        )
        box = trace.derived_box
        inside = box.rasterize(64, 64)
        assert (trace.stage_masks[2].values <= inside).all()

    def test_empty_stage2_degrades(self):
        _, segmenter, features = scene_fixture()
        # Positive and negative in the same region: the kept set is empty.
        prompts = PromptSet((pos(10, 10), neg(12, 12)))
        trace = run_cascade(segmenter, features, prompts, PipelineConfig(cascade_depth=3))
        assert trace.degraded
        assert trace.derived_box is None
        assert trace.depth == 3
        assert trace.stage_masks[2].is_empty()
        np.testing.assert_array_equal(
            trace.stage_masks[2].values, trace.stage_masks[1].values
        )

    def test_backend_error_carries_stage(self):
        stub = StubSegmenter(fail_on_call=2)
        features = stub.encode("x")
        with pytest.raises(BackendError) as err:
            run_cascade(stub, features, PromptSet((pos(1, 1),)), PipelineConfig(cascade_depth=3))
        assert err.value.stage == 2

    def test_deterministic(self):
        _, segmenter, features = scene_fixture([NoiseBlob(1, 2, 50, 2, 2)])
        prompts = PromptSet((pos(10, 10),))
        t1 = run_cascade(segmenter, features, prompts, PipelineConfig(cascade_depth=3))
        t2 = run_cascade(segmenter, features, prompts, PipelineConfig(cascade_depth=3))
        for a, b in zip(t1.stage_masks, t2.stage_masks):
            assert a.values.tobytes() == b.values.tobytes()
        assert t1.final_map.values.tobytes() == t2.final_map.values.tobytes()

    def test_degraded_prompts_flow_through_whole_cascade(self):
        # A below-threshold anomaly map degrades prompt mining to one
        # global-argmax positive; if that lands in the background the
        # synthetic decode returns empty masks and the cascade must
        # complete via its own degraded path instead of erroring.
        from zsas.prompts import generate_prompts

        scene, segmenter, features = scene_fixture()
        flat = np.full((64, 64), 0.2, dtype=np.float32)
        flat[0, 0] = 0.4  # argmax in the background corner
        anomaly = ScoreGrid(flat, normalized=True)
        config = PipelineConfig(
            extreme_threshold=0.9, cascade_depth=3, working_resolution=64, min_spacing=8.0
        )
        prompts, inter = generate_prompts(anomaly, features, config)
        assert inter.degraded
        trace = run_cascade(segmenter, features, prompts, config)
        assert trace.degraded
        assert trace.depth == 3
        assert all(m.is_empty() for m in trace.stage_masks)


class TestFinalMap:
    def test_binary_mode_zero_one(self):
        _, segmenter, features = scene_fixture()
        trace = run_cascade(
            segmenter, features, PromptSet((pos(10, 10),)), PipelineConfig(cascade_depth=1)
        )
        vals = np.unique(trace.final_map.values)
        assert set(vals.tolist()) <= {0.0, 1.0}
        assert trace.final_map.normalized

    def test_blended_mode_in_unit_range(self):
        _, segmenter, features = scene_fixture()
        config = PipelineConfig(cascade_depth=2, output_map_mode="blended", blend_weight=0.6)
        ramp = ScoreGrid(
            np.linspace(0.0, 1.0, 64 * 64, dtype=np.float32).reshape(64, 64), normalized=True
        )
        trace = run_cascade(
            segmenter, features, PromptSet((pos(10, 10),)), config, anomaly=ramp
        )
        assert trace.final_map.normalized
        assert trace.final_map.values.min() >= 0.0
        assert trace.final_map.values.max() <= 1.0
        assert len(np.unique(trace.final_map.values)) > 2  # genuinely blended

    def test_blended_requires_anomaly(self):
        mask = BinaryMask(np.zeros((8, 8), dtype=bool))
        with pytest.raises(ConfigError):
            finalize_map(mask, PipelineConfig(output_map_mode="blended"), None)
