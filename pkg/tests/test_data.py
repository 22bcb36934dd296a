import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svos import data as D


class TestPnmIO:
    @given(seed=st.integers(0, 10_000), h=st.integers(1, 12), w=st.integers(1, 12))
    @settings(max_examples=25, deadline=None)
    def test_ppm_roundtrip_bit_exact(self, tmp_path_factory, seed, h, w):
        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        path = tmp_path_factory.mktemp("pnm") / "img.ppm"
        D.write_ppm(path, img)
        np.testing.assert_array_equal(D.read_ppm(path), img)

    def test_mask_roundtrip_bit_exact(self, tmp_path, rng):
        mask = (rng.random((9, 13)) > 0.5).astype(np.uint8)
        D.write_mask(tmp_path / "m.pgm", mask)
        np.testing.assert_array_equal(D.read_mask(tmp_path / "m.pgm"), mask)

    def test_header_comments_accepted(self, tmp_path):
        raw = b"P5\n# a comment\n3 2\n255\n" + bytes(6)
        (tmp_path / "c.pgm").write_bytes(raw)
        assert D.read_mask(tmp_path / "c.pgm").shape == (2, 3)

    def test_nonbinary_mask_rejected(self, tmp_path):
        (tmp_path / "g.pgm").write_bytes(b"P5\n2 1\n255\n" + bytes([0, 17]))
        with pytest.raises(D.DataError):
            D.read_mask(tmp_path / "g.pgm")

    def test_truncated_file_rejected(self, tmp_path):
        (tmp_path / "t.ppm").write_bytes(b"P6\n4 4\n255\n" + bytes(5))
        with pytest.raises(D.DataError):
            D.read_ppm(tmp_path / "t.ppm")

    def test_wrong_maxval_rejected(self, tmp_path):
        (tmp_path / "m.pgm").write_bytes(b"P5\n1 1\n65535\n" + bytes(2))
        with pytest.raises(D.DataError):
            D.read_mask(tmp_path / "m.pgm")

    def test_size_from_header_only(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
        D.write_ppm(tmp_path / "s.ppm", img)
        assert D.pnm_size(tmp_path / "s.ppm") == (7, 5)

    def test_missing_file_error_names_path(self, tmp_path):
        with pytest.raises(D.DataError, match="nope.ppm"):
            D.read_ppm(tmp_path / "nope.ppm")


class TestResize:
    def test_identity(self, rng):
        img = rng.random((5, 7)).astype(np.float32)
        np.testing.assert_array_equal(D.resize_bilinear(img, 5, 7), img)

    def test_align_corners_interpolation(self):
        row = np.array([[0.0, 1.0]], dtype=np.float64)
        np.testing.assert_allclose(D.resize_bilinear(row, 1, 3), [[0.0, 0.5, 1.0]])

    def test_any_frame_to_training_resolution(self, rng):
        img = rng.integers(0, 256, size=(123, 201, 3), dtype=np.uint8)
        out = D.resize_bilinear(img, 256, 448)
        assert out.shape == (256, 448, 3)

    def test_nearest_stays_binary(self, rng):
        mask = (rng.random((11, 17)) > 0.5).astype(np.uint8)
        out = D.resize_nearest(mask, 7, 29)
        assert set(np.unique(out)) <= {0, 1}

    def test_zero_extent_rejected(self, rng):
        with pytest.raises(D.DataError):
            D.resize_bilinear(rng.random((4, 4)), 0, 4)


def _sequence(seed=0, **kw):
    base = dict(height=40, width=56, num_frames=6, num_objects=1,
                min_radius=6, max_radius=9, seed=seed)
    base.update(kw)
    return D.synth_generate(D.SynthConfig(**base))


class TestManifest:
    def test_export_load_roundtrip(self, tmp_path):
        seqs = [_sequence(seed=1), _sequence(seed=2, annotation_stride=2, num_frames=7)]
        manifest = D.export_sequences(seqs, tmp_path)
        loaded = D.load_manifest(manifest)
        assert [v.video_id for v in loaded] == [s.video_id for s in seqs]
        v = loaded[0]
        assert v.n_frames == 6
        np.testing.assert_array_equal(v.load_frame(3), seqs[0].frames[3])
        np.testing.assert_array_equal(v.mask_at("0", 0), seqs[0].annotations["0"][0])
        assert loaded[1].annotated_indices("0") == [0, 2, 4, 6]

    def test_annotation_presence_without_decoding(self, tmp_path):
        seq = _sequence(seed=3, annotation_stride=3, num_frames=8)
        loaded = D.load_manifest(D.export_sequences([seq], tmp_path))[0]
        assert loaded.annotated_indices("0") == [0, 3, 6]
        assert loaded.mask_at("0", 1) is None

    def test_eight_frames_at_stride_five_has_two_annotations(self, tmp_path):
        seq = _sequence(seed=12, annotation_stride=5, num_frames=8)
        loaded = D.load_manifest(D.export_sequences([seq], tmp_path))[0]
        assert loaded.annotated_indices("0") == [0, 5]

    def test_missing_mask_file_error_names_path(self, tmp_path):
        manifest = D.export_sequences([_sequence(seed=4)], tmp_path)
        victim = next(tmp_path.glob("*/object_0/mask_00002.pgm"))
        victim.unlink()
        with pytest.raises(D.DataError, match="mask_00002.pgm"):
            D.load_manifest(manifest)

    def test_stride_violation_rejected(self, tmp_path):
        seq = _sequence(seed=5, annotation_stride=5, num_frames=11)
        manifest = D.export_sequences([seq], tmp_path)
        doc = json.loads(manifest.read_text())
        doc["videos"][0]["objects"][0]["masks"].append(
            {"frame_index": 3, "path": doc["videos"][0]["objects"][0]["masks"][0]["path"]})
        manifest.write_text(json.dumps(doc))
        with pytest.raises(D.DataError, match="stride"):
            D.load_manifest(manifest)

    def test_missing_frame0_mask_rejected(self, tmp_path):
        seq = _sequence(seed=6)
        manifest = D.export_sequences([seq], tmp_path)
        doc = json.loads(manifest.read_text())
        doc["videos"][0]["objects"][0]["masks"] = \
            doc["videos"][0]["objects"][0]["masks"][1:]
        manifest.write_text(json.dumps(doc))
        with pytest.raises(D.DataError, match="frame 0"):
            D.load_manifest(manifest)

    def test_dimension_mismatch_rejected(self, tmp_path, rng):
        seq = _sequence(seed=7)
        manifest = D.export_sequences([seq], tmp_path)
        frame1 = next(tmp_path.glob("*/frame_00001.ppm"))
        D.write_ppm(frame1, rng.integers(0, 256, size=(10, 10, 3), dtype=np.uint8))
        with pytest.raises(D.DataError, match="expected"):
            D.load_manifest(manifest)

    def test_malformed_json_rejected(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text("{not json")
        with pytest.raises(D.DataError, match="malformed"):
            D.load_manifest(bad)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(D.DataError, match="manifest"):
            D.load_manifest(tmp_path / "absent.json")


class TestAffine:
    def test_identity_params_unchanged(self, rng):
        img = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
        mask = (rng.random((20, 30)) > 0.6).astype(np.uint8)
        out_img, out_mask = D.apply_affine(img, mask, D.AffineParams())
        np.testing.assert_array_equal(out_img, img)
        np.testing.assert_array_equal(out_mask, mask)

    def test_nonbinary_mask_rejected(self, rng):
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        with pytest.raises(D.DataError):
            D.affine_sample(img, np.full((8, 8), 2, dtype=np.uint8), rng)

    @given(seed=st.integers(0, 5_000))
    @settings(max_examples=25, deadline=None)
    def test_output_mask_stays_binary(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)
        mask = np.zeros((24, 24), dtype=np.uint8)
        mask[8:16, 8:16] = 1
        _, warped = D.affine_sample(img, mask, rng)
        assert set(np.unique(warped)) <= {0, 1}
        assert warped.any()

    def test_fixed_seed_reproducible(self):
        img = np.random.default_rng(1).integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[4:10, 4:10] = 1
        a = D.affine_sample(img, mask, np.random.default_rng(42))
        b = D.affine_sample(img, mask, np.random.default_rng(42))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_empty_after_warp_exhausts_retries(self):
        # blowing the image up 100x means every output pixel samples near the
        # center, so a lone corner pixel can never survive the warp
        img = np.zeros((32, 32, 3), dtype=np.uint8)
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[0, 0] = 1
        blow_up = D.AffineRanges(rotation=0, scale_lo=100.0, scale_hi=100.0,
                                 translate=0, shear=0)
        with pytest.raises(D.DataError, match="redraws"):
            D.affine_sample(img, mask, np.random.default_rng(0), blow_up)

    @pytest.mark.parametrize("scale", [0.8, 0.9, 1.1, 1.2])
    def test_scale_preserves_area_within_bound(self, scale):
        mask = np.zeros((64, 64), dtype=np.uint8)
        ys, xs = np.ogrid[:64, :64]
        mask[(ys - 32) ** 2 + (xs - 32) ** 2 <= 144] = 1
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        _, warped = D.apply_affine(img, mask, D.AffineParams(scale=scale))
        ratio = warped.sum() / mask.sum()
        assert scale * scale * 0.75 <= ratio <= scale * scale * 1.25


class TestSynth:
    def test_same_seed_bit_identical(self):
        a = _sequence(seed=11, drift_rate=2.0, jitter=1.0, num_occluders=1)
        b = _sequence(seed=11, drift_rate=2.0, jitter=1.0, num_occluders=1)
        assert len(a.frames) == len(b.frames)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa, fb)
        for obj in a.annotations:
            for idx in a.annotations[obj]:
                np.testing.assert_array_equal(a.annotations[obj][idx],
                                              b.annotations[obj][idx])

    def test_first_frame_masks_nonempty(self):
        for seed in range(6):
            seq = _sequence(seed=seed, num_objects=2, height=64, width=96)
            for obj in seq.annotations:
                assert seq.annotations[obj][0].sum() >= D.MIN_FIRST_FRAME_PIXELS

    def test_sequence_invariants_hold(self):
        seq = _sequence(seed=13, annotation_stride=2, num_frames=9)
        seq.validate()
        assert seq.annotated_indices("0") == [0, 2, 4, 6, 8]

    def test_constant_velocity_displaces_centroid(self):
        seq = D.synth_generate(D.SynthConfig(
            height=128, width=128, num_frames=6, num_objects=1,
            min_radius=8, max_radius=8, velocity_min=2.0, velocity_max=2.0,
            seed=3))

        def centroid(mask):
            ys, xs = np.nonzero(mask)
            return np.array([ys.mean(), xs.mean()])

        d = centroid(seq.annotations["0"][5]) - centroid(seq.annotations["0"][0])
        # speed 2 px/frame over 5 steps, direction arbitrary
        assert np.linalg.norm(d) == pytest.approx(10.0, abs=1.0)

    def test_occluder_carves_visible_mask(self):
        clean = _sequence(seed=21, height=48, width=48, min_radius=10, max_radius=10,
                          velocity_min=0.0, velocity_max=0.0)
        occluded = _sequence(seed=21, height=48, width=48, min_radius=10, max_radius=10,
                             velocity_min=0.0, velocity_max=0.0, num_occluders=3)
        assert occluded.annotations["0"][0].sum() <= clean.annotations["0"][0].sum()

    def test_drift_changes_object_color(self):
        static = _sequence(seed=31, num_frames=8)
        drifted = _sequence(seed=31, num_frames=8, drift_rate=12.0)
        m = drifted.annotations["0"][7].astype(bool) & static.annotations["0"][7].astype(bool)
        if m.sum() > 0:
            assert not np.array_equal(drifted.frames[7][m], static.frames[7][m])

    def test_dataset_derives_per_sequence_seeds(self):
        cfg = D.SynthConfig(height=40, width=56, num_frames=4, seed=100)
        seqs = D.synth_dataset(cfg, 3)
        assert [s.video_id for s in seqs] == \
               ["synth_000100", "synth_000101", "synth_000102"]

    def test_invalid_config_rejected(self):
        with pytest.raises(D.DataError):
            D.SynthConfig(min_radius=9, max_radius=3)
        with pytest.raises(D.DataError):
            D.SynthConfig(annotation_stride=0)
