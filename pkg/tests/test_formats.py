"""Readers and writers: depth rasters, PFM, PLY clouds, camera and box JSON.

Round trips use float32-representable values (halves, quarters) so the
equality checks are exact, not approximate.
"""

import io
import json
import struct

import numpy as np
import pytest
from PIL import Image

from liftbox import (
    Box3D,
    CameraModel,
    DepthImage,
    FormatError,
    PointCloud,
)
from liftbox.formats import (
    atomic_write_bytes,
    dumps_json,
    read_annotations,
    read_box_set,
    read_camera,
    read_depth,
    read_detections,
    read_json,
    read_normal_map,
    read_ply,
    write_annotations,
    write_box_set,
    write_camera,
    write_depth,
    write_pfm,
    write_ply,
)


def _depth(depths):
    depths = np.asarray(depths, dtype=np.float64)
    return DepthImage(depths=depths, valid=depths > 0)


class TestAtomicWrite:
    def test_writes_and_creates_parents(self, tmp_path):
        target = tmp_path / "a" / "b" / "out.bin"
        atomic_write_bytes(target, b"\x00\x01payload")
        assert target.read_bytes() == b"\x00\x01payload"

    def test_overwrites_existing(self, tmp_path):
        target = tmp_path / "out.bin"
        target.write_bytes(b"old")
        atomic_write_bytes(target, b"new")
        assert target.read_bytes() == b"new"

    def test_no_temp_files_left_behind(self, tmp_path):
        atomic_write_bytes(tmp_path / "out.bin", b"x")
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {"out.bin"}


class TestCanonicalJson:
    def test_sorted_keys_and_trailing_newline(self):
        text = dumps_json({"b": 1, "a": 2})
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": 2, "b": 1}

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            dumps_json({"x": float("nan")})

    def test_read_json_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="cannot read"):
            read_json(tmp_path / "missing.json")

    def test_read_json_syntax_error_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  broken\n}")
        with pytest.raises(FormatError, match="line 2"):
            read_json(path)


class TestDepthPng:
    def test_round_trip_quantizes_to_millimeters(self, tmp_path):
        path = tmp_path / "d.png"
        write_depth(path, _depth([[0.001, 1.5], [0.0, 65.535]]))
        back = read_depth(path)
        assert back.depths[back.valid] == pytest.approx([0.001, 1.5, 65.535])
        assert not back.valid[1, 0]

    def test_values_above_range_saturate(self, tmp_path):
        path = tmp_path / "d.png"
        write_depth(path, _depth([[70.0]]))
        assert read_depth(path).depths[0, 0] == pytest.approx(65.535)

    def test_sub_millimeter_rounds(self, tmp_path):
        path = tmp_path / "d.png"
        write_depth(path, _depth([[1.2344]]))
        assert read_depth(path).depths[0, 0] == pytest.approx(1.234)

    def test_uppercase_suffix_accepted(self, tmp_path):
        path = tmp_path / "d.PNG"
        write_depth(path, _depth([[2.0]]))
        assert read_depth(path).depths[0, 0] == pytest.approx(2.0)

    def test_eight_bit_png_rejected(self, tmp_path):
        path = tmp_path / "gray8.png"
        buf = io.BytesIO()
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(buf, format="PNG")
        path.write_bytes(buf.getvalue())
        with pytest.raises(FormatError, match="16-bit"):
            read_depth(path)

    def test_garbage_png_rejected(self, tmp_path):
        path = tmp_path / "noise.png"
        path.write_bytes(b"not a png at all")
        with pytest.raises(FormatError, match="decode"):
            read_depth(path)

    def test_unknown_suffix_rejected(self, tmp_path):
        with pytest.raises(FormatError, match="unsupported"):
            write_depth(tmp_path / "d.exr", _depth([[1.0]]))
        with pytest.raises(FormatError, match="unsupported"):
            read_depth(tmp_path / "d.exr")


class TestDepthPfm:
    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "d.pfm"
        depths = np.array([[0.5, 1.25], [3.75, 0.0]])
        write_depth(path, _depth(depths))
        back = read_depth(path)
        assert np.array_equal(back.depths[back.valid], [0.5, 1.25, 3.75])
        assert not back.valid[1, 1]

    def test_rows_stored_bottom_up(self, tmp_path):
        path = tmp_path / "hand.pfm"
        payload = struct.pack("<2f", 5.0, 7.0)  # bottom scanline first
        path.write_bytes(b"Pf\n1 2\n-1.0\n" + payload)
        assert np.array_equal(read_depth(path).depths, [[7.0], [5.0]])

    def test_big_endian_scale_sign(self, tmp_path):
        path = tmp_path / "be.pfm"
        path.write_bytes(b"Pf\n2 1\n1.0\n" + struct.pack(">2f", 1.5, 2.5))
        assert np.array_equal(read_depth(path).depths, [[1.5, 2.5]])

    def test_color_pfm_is_not_a_depth_map(self, tmp_path):
        path = tmp_path / "c.pfm"
        write_pfm(path, np.zeros((2, 2, 3)) + 0.5)
        with pytest.raises(FormatError, match="grayscale"):
            read_depth(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "d.pfm"
        write_depth(path, _depth(np.full((4, 4), 2.0)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])
        with pytest.raises(FormatError, match="truncated"):
            read_depth(path)

    @pytest.mark.parametrize("header", [
        b"P6\n1 1\n-1.0\n",          # wrong magic
        b"Pf\n0 1\n-1.0\n",          # zero width
        b"Pf\n1 1\n0.0\n",           # zero scale
        b"Pf\nx 1\n-1.0\n",          # non-numeric size
        b"Pf\n1 1\n",                # missing scale token
    ])
    def test_malformed_headers(self, tmp_path, header):
        path = tmp_path / "bad.pfm"
        path.write_bytes(header + b"\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_depth(path)

    def test_write_pfm_rejects_odd_shapes(self, tmp_path):
        with pytest.raises(FormatError, match="shape"):
            write_pfm(tmp_path / "bad.pfm", np.zeros((2, 2, 4)))


class TestNormalMap:
    def test_round_trip_renormalizes(self, tmp_path):
        path = tmp_path / "n.pfm"
        data = np.zeros((1, 2, 3))
        data[0, 0] = (0.0, 0.0, 2.0)    # non-unit on purpose
        data[0, 1] = (0.0, 0.0, 0.0)    # degenerate
        write_pfm(path, data)
        nmap = read_normal_map(path)
        assert np.array_equal(nmap.normals[0, 0], [0.0, 0.0, 1.0])
        assert nmap.valid[0, 0] and not nmap.valid[0, 1]
        assert nmap.origin_depth is None

    def test_gray_pfm_rejected(self, tmp_path):
        path = tmp_path / "n.pfm"
        write_pfm(path, np.ones((2, 2)))
        with pytest.raises(FormatError, match="3-channel"):
            read_normal_map(path)

    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(FormatError, match="unsupported"):
            read_normal_map(tmp_path / "n.npy")


class TestPly:
    def test_round_trip_with_provenance(self, tmp_path):
        path = tmp_path / "c.ply"
        cloud = PointCloud(
            points=np.array([[0.5, -0.25, 2.0], [1.5, 0.0, 3.25]]),
            provenance=np.array([[3, 7], [600, 400]]))
        write_ply(path, cloud)
        back = read_ply(path)
        assert np.array_equal(back.points, cloud.points)
        assert np.array_equal(back.provenance, cloud.provenance)
        assert back.provenance.dtype == np.int64

    def test_round_trip_without_provenance(self, tmp_path):
        path = tmp_path / "c.ply"
        write_ply(path, PointCloud(points=np.array([[0.5, 0.5, 1.0]])))
        assert read_ply(path).provenance is None

    def test_empty_cloud(self, tmp_path):
        path = tmp_path / "empty.ply"
        write_ply(path, PointCloud(points=np.zeros((0, 3))))
        assert len(read_ply(path)) == 0

    def test_extra_scalar_properties_tolerated(self, tmp_path):
        path = tmp_path / "extra.ply"
        header = (b"ply\nformat binary_little_endian 1.0\n"
                  b"element vertex 1\nproperty float x\nproperty float y\n"
                  b"property float z\nproperty uchar intensity\nend_header\n")
        path.write_bytes(header + struct.pack("<3fB", 1.0, 2.0, 3.0, 9))
        assert np.array_equal(read_ply(path).points, [[1.0, 2.0, 3.0]])

    @pytest.mark.parametrize("header, message", [
        (b"pny\nend_header\n", "not a PLY"),
        (b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\n"
         b"property float y\nproperty float z\nend_header\n", "little-endian"),
        (b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
         b"property list uchar int vertex_indices\nend_header\n", "list"),
        (b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
         b"property float x\nproperty float y\nend_header\n", "x/y/z"),
        (b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
         b"property quad x\nend_header\n", "unknown property"),
        (b"ply\nformat binary_little_endian 1.0\nend_header\n", "vertex element"),
    ])
    def test_malformed_headers(self, tmp_path, header, message):
        path = tmp_path / "bad.ply"
        path.write_bytes(header)
        with pytest.raises(FormatError, match=message):
            read_ply(path)

    def test_truncated_body(self, tmp_path):
        path = tmp_path / "c.ply"
        write_ply(path, PointCloud(points=np.full((3, 3), 1.0)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-2])
        with pytest.raises(FormatError, match="truncated"):
            read_ply(path)


class TestCameraJson:
    def test_round_trip_with_pose(self, tmp_path):
        path = tmp_path / "cam.json"
        camera = CameraModel(
            fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480,
            rotation=np.array([[1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]]),
            translation=np.array([0.1, -0.2, 0.3]))
        write_camera(path, camera)
        back = read_camera(path)
        assert back.fx == camera.fx and back.width == 640
        assert np.array_equal(back.rotation, camera.rotation)
        assert np.array_equal(back.translation, camera.translation)

    def test_pose_defaults_to_identity(self, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text(dumps_json(
            {"fx": 1.0, "fy": 1.0, "cx": 1.0, "cy": 1.0, "width": 2, "height": 2}))
        back = read_camera(path)
        assert np.array_equal(back.rotation, np.eye(3))
        assert np.array_equal(back.translation, np.zeros(3))

    def test_missing_field(self, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text(dumps_json({"fx": 1.0}))
        with pytest.raises(FormatError, match="bad camera"):
            read_camera(path)

    def test_non_object(self, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text("[1, 2]\n")
        with pytest.raises(FormatError, match="object"):
            read_camera(path)


class TestDetectionsJson:
    def test_reads_boxes_with_default_score(self, tmp_path):
        path = tmp_path / "det.json"
        path.write_text(dumps_json([
            {"bbox": [10, 20, 30, 40], "category": "chair", "score": 0.75},
            {"bbox": [0, 0, 5, 5], "category": "table"},
        ]))
        boxes = read_detections(path)
        assert (boxes[0].umin, boxes[0].vmax) == (10.0, 40.0)
        assert boxes[0].score == 0.75
        assert boxes[1].score == 1.0

    def test_non_array(self, tmp_path):
        path = tmp_path / "det.json"
        path.write_text("{}\n")
        with pytest.raises(FormatError, match="array"):
            read_detections(path)

    def test_bad_item_reports_index(self, tmp_path):
        path = tmp_path / "det.json"
        path.write_text(dumps_json([
            {"bbox": [0, 0, 5, 5], "category": "chair"},
            {"bbox": [0, 0, 5], "category": "chair"},
        ]))
        with pytest.raises(FormatError, match="index 1"):
            read_detections(path)


class TestBoxJson:
    BOXES = [
        Box3D(center=(1.0, 2.0, 0.5), dims=(0.5, 0.25, 1.0), yaw=0.5,
              category="chair", score=0.9),
        Box3D(center=(0.0, 0.0, 0.0), dims=(2.0, 1.0, 1.0), yaw=-0.25,
              category="table"),
    ]

    def test_annotations_round_trip(self, tmp_path):
        path = tmp_path / "boxes.json"
        write_annotations(path, self.BOXES)
        back = read_annotations(path)
        assert back == self.BOXES
        assert back[1].score is None

    def test_box_set_round_trip(self, tmp_path):
        path = tmp_path / "set.json"
        write_box_set(path, {"s0": self.BOXES, "s1": []})
        back = read_box_set(path)
        assert back == {"s0": self.BOXES, "s1": []}

    def test_annotations_must_be_array(self, tmp_path):
        path = tmp_path / "boxes.json"
        path.write_text("{}\n")
        with pytest.raises(FormatError, match="array"):
            read_annotations(path)

    def test_box_set_must_be_object(self, tmp_path):
        path = tmp_path / "set.json"
        path.write_text("[]\n")
        with pytest.raises(FormatError, match="scene ids"):
            read_box_set(path)

    def test_box_set_scene_must_be_array(self, tmp_path):
        path = tmp_path / "set.json"
        path.write_text(dumps_json({"s0": {"center": [0, 0, 0]}}))
        with pytest.raises(FormatError, match="s0"):
            read_box_set(path)

    def test_bad_box_names_location(self, tmp_path):
        path = tmp_path / "boxes.json"
        path.write_text(dumps_json([{"center": [0, 0, 0]}]))
        with pytest.raises(FormatError, match=r"\[0\]"):
            read_annotations(path)

    def test_output_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_box_set(a, {"s0": self.BOXES})
        write_box_set(b, {"s0": self.BOXES})
        assert a.read_bytes() == b.read_bytes()
