import numpy as np
import pytest
from scipy import ndimage

from vpseg.arrays import BinaryMask, DenseMap
from vpseg.backends import (
    MODE_POINT_CANDIDATES,
    MODE_PROMPT_SEGMENTATION,
    BackendRequest,
    BackendResponse,
    MockBackend,
    NoiseConfig,
    ReplayBackend,
    ReplayStoreWriter,
    request_digest,
)
from vpseg.errors import BackendError, ReplayNotFoundError
from vpseg.prompts import PointPrompt, PromptBundle
from vpseg.synth import SceneSpec, SyntheticScene, scene_generate

from helpers import random_blob_mask


def point_req(image_id, y, x):
    return BackendRequest(
        image_id=image_id,
        mode=MODE_POINT_CANDIDATES,
        point=PointPrompt(y=y, x=x, polarity="positive"),
    )


def prompt_req(image_id, bundle):
    return BackendRequest(image_id=image_id, mode=MODE_PROMPT_SEGMENTATION, prompts=bundle)


def mask_only_bundle(values):
    return PromptBundle(mask_prompt=DenseMap(values), points=())


class TestRequestValidation:
    def test_mode_fields_enforced(self):
        with pytest.raises(ValueError):
            BackendRequest(image_id="x", mode=MODE_PROMPT_SEGMENTATION)
        with pytest.raises(ValueError):
            BackendRequest(
                image_id="x",
                mode=MODE_POINT_CANDIDATES,
                prompts=mask_only_bundle(np.zeros((4, 4))),
                point=PointPrompt(y=0, x=0, polarity="positive"),
            )
        with pytest.raises(ValueError):
            BackendRequest(image_id="x", mode="telepathy")

    def test_digest_covers_prompt_bytes(self):
        bundle_a = mask_only_bundle(np.zeros((8, 8)))
        perturbed = np.zeros((8, 8))
        perturbed[3, 3] = 1e-3
        bundle_b = mask_only_bundle(perturbed)
        assert request_digest(prompt_req("img", bundle_a)) != request_digest(
            prompt_req("img", bundle_b)
        )
        assert request_digest(prompt_req("img", bundle_a)) != request_digest(
            prompt_req("img2", bundle_a)
        )
        assert request_digest(point_req("img", 1, 2)) != request_digest(point_req("img", 2, 1))


class TestReplayBackend:
    def test_logits_roundtrip_bit_exact(self, tmp_path, rng):
        writer = ReplayStoreWriter(tmp_path)
        bundle = mask_only_bundle(rng.normal(size=(16, 16)))
        req = prompt_req("img0", bundle)
        logits = DenseMap(rng.normal(size=(32, 32)).astype(np.float32).astype(np.float64))
        writer.put_logits(req, logits)
        backend = ReplayBackend(tmp_path)
        out = backend.query(req)
        assert np.array_equal(out.logits.values, logits.values)

    def test_candidates_roundtrip(self, tmp_path, rng):
        writer = ReplayStoreWriter(tmp_path)
        req = point_req("img0", 5, 9)
        masks = [random_blob_mask(rng, 20, 20) for _ in range(3)]
        writer.put_candidates(req, masks)
        backend = ReplayBackend(tmp_path)
        out = backend.query(req)
        assert len(out.candidates) == 3
        for got, want in zip(out.candidates, masks):
            assert np.array_equal(got.bits, want.bits)

    def test_unknown_image_not_found(self, tmp_path):
        ReplayStoreWriter(tmp_path)  # create the root
        backend = ReplayBackend(tmp_path)
        with pytest.raises(ReplayNotFoundError):
            backend.query(point_req("ghost", 0, 0))

    def test_prompt_perturbation_changes_digest_to_not_found(self, tmp_path, rng):
        writer = ReplayStoreWriter(tmp_path)
        bundle = mask_only_bundle(rng.normal(size=(8, 8)))
        req = prompt_req("img0", bundle)
        writer.put_logits(req, DenseMap(np.zeros((16, 16))))
        backend = ReplayBackend(tmp_path)
        perturbed = bundle.mask_prompt.values.copy()
        perturbed[0, 0] += 1e-6
        bad_req = prompt_req("img0", mask_only_bundle(perturbed))
        with pytest.raises(ReplayNotFoundError) as exc:
            backend.query(bad_req)
        assert request_digest(bad_req) in str(exc.value)

    def test_deterministic(self, tmp_path, rng):
        writer = ReplayStoreWriter(tmp_path)
        req = point_req("img0", 2, 2)
        writer.put_candidates(req, [random_blob_mask(rng, 10, 10)])
        backend = ReplayBackend(tmp_path)
        a = backend.query(req)
        b = backend.query(req)
        assert np.array_equal(a.candidates[0].bits, b.candidates[0].bits)


def three_object_scene():
    labels = np.zeros((40, 40), dtype=np.int32)
    labels[2:10, 2:10] = 1
    labels[2:10, 20:30] = 2
    labels[25:38, 5:25] = 3
    return SyntheticScene(labels=labels)


class TestMockBackend:
    def test_point_inside_object_returns_exact_mask(self):
        scene = three_object_scene()
        backend = MockBackend(scene)
        out = backend.query(point_req("s", 5, 25))
        assert len(out.candidates) == 1
        assert np.array_equal(out.candidates[0].bits, scene.labels == 2)

    def test_background_point_empty_candidate(self):
        backend = MockBackend(three_object_scene())
        out = backend.query(point_req("s", 15, 15))
        assert len(out.candidates) == 1
        assert out.candidates[0].area() == 0

    def test_point_outside_image_error(self):
        backend = MockBackend(three_object_scene())
        with pytest.raises(BackendError):
            backend.query(point_req("s", 99, 0))

    def test_erosion_noise_shrinks_candidate(self):
        scene = three_object_scene()
        backend = MockBackend(scene, noise=NoiseConfig(erosion_radius=2))
        out = backend.query(point_req("s", 30, 15))
        expected = ndimage.binary_erosion(
            scene.labels == 3,
            structure=np.array([[0, 0, 1, 0, 0], [0, 1, 1, 1, 0], [1, 1, 1, 1, 1],
                                [0, 1, 1, 1, 0], [0, 0, 1, 0, 0]], dtype=bool),
        )
        assert np.array_equal(out.candidates[0].bits, expected)
        assert out.candidates[0].area() < int((scene.labels == 3).sum())

    def test_prompt_segmentation_mask_rule(self):
        scene = three_object_scene()
        backend = MockBackend(scene)
        prompt = np.full((40, 40), -1.0)
        prompt[0:12, 0:12] = 1.0  # covers object 1 fully, others barely
        out = backend.query(prompt_req("s", mask_only_bundle(prompt)))
        logits = out.logits.values
        assert np.all(logits[scene.labels == 1] == 4.0)
        assert np.all(logits[scene.labels == 2] == -4.0)
        assert np.all(logits[scene.labels == 3] == -4.0)
        assert np.all(logits[scene.labels == 0] == -4.0)

    def test_positive_point_adds_object_and_negative_vetoes(self):
        scene = three_object_scene()
        backend = MockBackend(scene)
        pts = (
            PointPrompt(y=5, x=5, polarity="positive"),
            PointPrompt(y=30, x=15, polarity="positive"),
            PointPrompt(y=30, x=16, polarity="negative"),
        )
        bundle = PromptBundle(mask_prompt=None, points=pts)
        out = backend.query(prompt_req("s", bundle))
        logits = out.logits.values
        assert np.all(logits[scene.labels == 1] == 4.0)  # clean positive
        assert np.all(logits[scene.labels == 3] == -4.0)  # vetoed by negative
        assert np.all(logits[scene.labels == 2] == -4.0)  # untouched

    def test_logit_noise_deterministic_per_request(self):
        scene = three_object_scene()
        backend = MockBackend(scene, noise=NoiseConfig(logit_noise_sigma=0.5, seed=3))
        bundle = mask_only_bundle(np.ones((40, 40)))
        a = backend.query(prompt_req("s", bundle)).logits.values
        b = backend.query(prompt_req("s", bundle)).logits.values
        assert np.array_equal(a, b)
        other_seed = MockBackend(scene, noise=NoiseConfig(logit_noise_sigma=0.5, seed=4))
        c = other_seed.query(prompt_req("s", bundle)).logits.values
        assert not np.array_equal(a, c)

    def test_noiseless_candidate_equals_object(self):
        scene = scene_generate(11, SceneSpec())
        backend = MockBackend(scene)
        for label in range(1, scene.object_count + 1):
            ys, xs = np.nonzero(scene.labels == label)
            out = backend.query(point_req("s", int(ys[len(ys) // 2]), int(xs[len(xs) // 2])))
            assert np.array_equal(out.candidates[0].bits, scene.labels == label)


class TestSceneGenerate:
    def test_same_seed_identical(self):
        a = scene_generate(7, SceneSpec())
        b = scene_generate(7, SceneSpec())
        assert np.array_equal(a.labels, b.labels)

    def test_three_rectangles_disjoint(self):
        spec = SceneSpec(min_objects=3, max_objects=3, kinds=("rectangle",))
        scene = scene_generate(0, spec)
        assert scene.object_count == 3
        areas = sum(s.area() for s in scene.shapes)
        assert areas == int((scene.labels > 0).sum())

    def test_labels_contiguous_and_connected(self):
        scene = scene_generate(3, SceneSpec())
        labels = sorted(np.unique(scene.labels).tolist())
        assert labels == list(range(scene.object_count + 1))
        for shape in scene.shapes:
            _, count = ndimage.label(
                shape.bits, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
            )
            assert count == 1

    def test_ring_has_hole(self):
        spec = SceneSpec(min_objects=1, max_objects=1, kinds=("ring",), min_size=24, max_size=32)
        scene = scene_generate(5, spec)
        four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])

        def has_hole(bits):
            # flood fill the complement from the border; leftover complement = holes
            comp, count = ndimage.label(~bits, structure=four)
            border = set(comp[0, :]) | set(comp[-1, :]) | set(comp[:, 0]) | set(comp[:, -1])
            border.discard(0)
            return any(lab not in border for lab in range(1, count + 1))

        assert has_hole(scene.shapes[0].bits)
        solid = scene_generate(5, SceneSpec(min_objects=1, max_objects=1, kinds=("ellipse",)))
        assert not has_hole(solid.shapes[0].bits)

    def test_disjoint_with_gap(self):
        for seed in range(8):
            scene = scene_generate(seed, SceneSpec(gap=2))
            occupied = scene.labels > 0
            for shape in scene.shapes:
                dilated = ndimage.binary_dilation(shape.bits, iterations=2)
                others = occupied & ~shape.bits
                assert not (dilated & others).any()
