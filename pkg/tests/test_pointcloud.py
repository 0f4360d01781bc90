"""Scan/label file framing, class-map remapping, and synthetic scenes."""

import numpy as np
import pytest

from rangeseg import pointcloud as pc


def write_scan(path, records):
    path.write_bytes(np.asarray(records, dtype="<f4").tobytes())


class TestScanLoading:
    def test_single_record_decode(self, tmp_path):
        path = tmp_path / "one.bin"
        write_scan(path, [[1.0, 0.0, 0.0, 0.5]])
        cloud = pc.load_kitti_scan(path)
        assert len(cloud) == 1
        assert cloud.ranges()[0] == 1.0
        assert cloud.remission[0] == 0.5

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        with pytest.raises(pc.ScanFormatError, match="empty scan"):
            pc.load_kitti_scan(path)

    def test_bad_framing_names_byte_count(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 33)
        with pytest.raises(pc.ScanFormatError, match="33"):
            pc.load_kitti_scan(path)

    def test_degenerate_points_dropped_with_indices(self, tmp_path):
        path = tmp_path / "mixed.bin"
        write_scan(
            path,
            [
                [1.0, 2.0, 0.0, 0.1],
                [0.0, 0.0, 0.0, 0.2],  # zero range
                [3.0, 0.0, 1.0, 0.3],
                [np.nan, 1.0, 1.0, 0.4],  # non-finite
                [0.5, 0.5, 0.5, 0.5],
            ],
        )
        cloud = pc.load_kitti_scan(path)
        assert len(cloud) == 3
        np.testing.assert_array_equal(cloud.dropped_indices, [1, 3])
        # dropped indices strictly increasing and disjoint from kept rows
        assert (np.diff(cloud.dropped_indices) > 0).all()

    def test_save_load_roundtrip_bit_exact(self, tmp_path, rng):
        path = tmp_path / "scan.bin"
        records = rng.normal(size=(64, 4)).astype(np.float32)
        records[:, 3] = np.abs(records[:, 3]) % 1.0
        write_scan(path, records)
        cloud = pc.load_kitti_scan(path)
        out = tmp_path / "copy.bin"
        pc.save_kitti_scan(out, cloud)
        assert out.read_bytes() == path.read_bytes()


class TestLabelLoading:
    def make_map(self):
        return pc.parse_class_map("0 0 unlabeled\n0x33 5 car\n" if False else "0 0 unlabeled\n51 5 car\n")

    def test_low_bits_extracted_and_remapped(self, tmp_path):
        cmap = pc.parse_class_map("0 0 unlabeled\n51 5 car")
        path = tmp_path / "a.label"
        # 0x00010033 = instance 1, semantic 0x33 = 51
        path.write_bytes(np.array([0x00010033], dtype="<u4").tobytes())
        labels = pc.load_kitti_labels(path, cmap)
        assert labels.labels[0] == 5
        assert labels.class_count == 6

    def test_unknown_raw_maps_to_ignore(self, tmp_path):
        cmap = pc.parse_class_map("0 0 unlabeled\n51 5 car")
        path = tmp_path / "b.label"
        path.write_bytes(np.array([999], dtype="<u4").tobytes())
        labels = pc.load_kitti_labels(path, cmap)
        assert labels.labels[0] == cmap.ignore_id == 0

    def test_pairing_mismatch_rejected(self, tmp_path):
        cmap = pc.parse_class_map("0 0 unlabeled\n51 5 car")
        scan_path = tmp_path / "s.bin"
        write_scan(scan_path, [[1, 0, 0, 0.1], [0, 1, 0, 0.2], [0, 0, 1, 0.3]])
        cloud = pc.load_kitti_scan(scan_path)
        label_path = tmp_path / "s.label"
        path_labels = np.array([51, 51, 51, 51], dtype="<u4")
        label_path.write_bytes(path_labels.tobytes())
        with pytest.raises(pc.ScanFormatError, match="4 labels"):
            pc.load_kitti_labels(label_path, cmap, scan=cloud)

    def test_dropped_scan_rows_remove_their_labels(self, tmp_path):
        cmap = pc.parse_class_map("0 0 unlabeled\n51 5 car\n52 6 wall")
        scan_path = tmp_path / "s.bin"
        write_scan(scan_path, [[1, 0, 0, 0.1], [0, 0, 0, 0.2], [0, 0, 1, 0.3]])
        cloud = pc.load_kitti_scan(scan_path)
        label_path = tmp_path / "s.label"
        label_path.write_bytes(np.array([51, 52, 51], dtype="<u4").tobytes())
        labels = pc.load_kitti_labels(label_path, cmap, scan=cloud)
        np.testing.assert_array_equal(labels.labels, [5, 5])

    def test_bad_label_framing(self, tmp_path):
        cmap = pc.parse_class_map("0 0 unlabeled")
        path = tmp_path / "c.label"
        path.write_bytes(b"\x00" * 6)
        with pytest.raises(pc.ScanFormatError, match="6"):
            pc.load_kitti_labels(path, cmap)


class TestClassMap:
    def test_parse_with_comments(self):
        cmap = pc.parse_class_map("# header\n10 1 car # trailing\n\n40 9 road")
        assert cmap.raw_to_train == {10: 1, 40: 9}
        assert cmap.names[10] == "car"
        assert cmap.class_count == 10

    def test_packaged_default_covers_19_classes(self):
        cmap = pc.default_class_map()
        assert cmap.class_count == 20
        assert set(cmap.raw_to_train.values()) == set(range(20))
        # moving classes collapse onto their static counterparts
        assert cmap.raw_to_train[252] == cmap.raw_to_train[10]

    def test_empty_map_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            pc.parse_class_map("# nothing here")


class TestSyntheticScenes:
    def test_same_seed_byte_identical(self):
        spec = pc.SyntheticSceneSpec(rng_seed=11, beam_rows=16, beam_cols=32)
        a_cloud, a_labels = pc.generate_synthetic_scene(spec)
        b_cloud, b_labels = pc.generate_synthetic_scene(spec)
        assert a_cloud.points.tobytes() == b_cloud.points.tobytes()
        assert a_labels.labels.tobytes() == b_labels.labels.tobytes()

    def test_ground_only_scene_single_class(self):
        spec = pc.SyntheticSceneSpec(
            rng_seed=2, beam_rows=16, beam_cols=32,
            box_count=0, pole_count=0, wall_count=0,
        )
        _, labels = pc.generate_synthetic_scene(spec)
        assert set(np.unique(labels.labels)) == {pc.GROUND_CLASS}

    def test_counts_match_independent_raycast_recount(self):
        """Re-cast every beam with a scalar loop and compare hit/label counts."""
        spec = pc.SyntheticSceneSpec(
            rng_seed=7, beam_rows=16, beam_cols=32,
            box_count=2, pole_count=2, wall_count=1, noise_sigma=0.0,
        )
        cloud, labels = pc.generate_synthetic_scene(spec)
        prims = pc.scene_primitives(spec)
        dirs, origin = pc.beam_directions(spec)

        def slab_hit(d, lo, hi):
            tn, tf = -np.inf, np.inf
            for axis in range(3):
                if d[axis] == 0.0:
                    if not lo[axis] <= origin[axis] <= hi[axis]:
                        return np.inf
                    continue
                t1 = (lo[axis] - origin[axis]) / d[axis]
                t2 = (hi[axis] - origin[axis]) / d[axis]
                tn = max(tn, min(t1, t2))
                tf = min(tf, max(t1, t2))
            return tn if (tn <= tf and tn > 0.5 and tf > 0.5) else np.inf

        recount = {c: 0 for c in range(5)}
        hits = 0
        for d in dirs:
            best_t, best_c = np.inf, 0
            if prims.ground and d[2] < 0:
                t = -origin[2] / d[2]
                p = origin + t * d
                if t > 0.5 and abs(p[0]) <= spec.extent and abs(p[1]) <= spec.extent and t < best_t:
                    best_t, best_c = t, pc.GROUND_CLASS
            for group, cls in ((prims.boxes, pc.BOX_CLASS), (prims.walls, pc.WALL_CLASS)):
                for box in group:
                    t = slab_hit(d, box[:3], box[3:])
                    if t < best_t:
                        best_t, best_c = t, cls
            for cx, cy, radius, height in prims.poles:
                ox, oy = origin[0] - cx, origin[1] - cy
                a = d[0] ** 2 + d[1] ** 2
                b = 2 * (ox * d[0] + oy * d[1])
                cq = ox * ox + oy * oy - radius * radius
                disc = b * b - 4 * a * cq
                if disc >= 0 and a > 0:
                    t = (-b - np.sqrt(disc)) / (2 * a)
                    z = origin[2] + t * d[2]
                    if t > 0.5 and 0 <= z <= height and t < best_t:
                        best_t, best_c = t, pc.POLE_CLASS
            if best_t <= spec.range_limit:
                hits += 1
                recount[best_c] += 1

        assert hits == len(cloud)
        histogram = np.bincount(labels.labels, minlength=5)
        for c in range(5):
            assert histogram[c] == recount[c]

    def test_class_count_must_cover_primitives(self):
        with pytest.raises(ValueError, match="class_count"):
            pc.SyntheticSceneSpec(class_count=3, pole_count=1)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError, match="noise_sigma"):
            pc.SyntheticSceneSpec(noise_sigma=-0.1)


class TestPointCloudInvariants:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pc.PointCloud(np.empty((0, 4)))

    def test_origin_point_rejected(self):
        with pytest.raises(ValueError, match="zero-range"):
            pc.PointCloud(np.array([[0.0, 0.0, 0.0, 0.1]]))

    def test_label_range_validated(self):
        with pytest.raises(ValueError, match="out of range"):
            pc.LabelArray(np.array([0, 5]), class_count=5)
