import json
import math

import numpy as np
import pytest

from renal_speckle.io import (
    find_pairs,
    group_frames,
    read_csv,
    read_gray,
    read_json,
    write_csv,
    write_json,
    write_png,
)


def test_png_roundtrip(tmp_path):
    arr = np.arange(256, dtype=np.uint8).reshape(16, 16)
    write_png(arr, tmp_path / "a.png")
    np.testing.assert_array_equal(read_gray(tmp_path / "a.png"), arr)


def test_pairs_and_frames(tmp_path):
    (tmp_path / "i").mkdir()
    (tmp_path / "m").mkdir()
    for stem in ("a_f2", "a_f0", "b", "c"):
        write_png(np.zeros((2, 2)), tmp_path / "i" / f"{stem}.png")
    for stem in ("a_f2", "a_f0", "b", "d"):
        write_png(np.zeros((2, 2)), tmp_path / "m" / f"{stem}.png")
    pairs, unpaired = find_pairs(tmp_path / "i", tmp_path / "m")
    assert [s for s, _, _ in pairs] == ["a_f0", "a_f2", "b"]
    assert unpaired == ["c", "d"]
    groups = group_frames(pairs)
    assert list(groups) == ["a", "b"]
    assert [img.stem for img, _ in groups["a"]] == ["a_f0", "a_f2"]


def test_json_nan(tmp_path):
    write_json({"x": math.nan, "y": [np.float64(1.5), np.int64(2)], "z": np.bool_(True)}, tmp_path / "a.json")
    assert read_json(tmp_path / "a.json") == {"x": None, "y": [1.5, 2], "z": True}


def test_csv_roundtrip(tmp_path):
    rows = [{"a": 0.1, "b": "x"}, {"a": 1e-17, "b": ""}]
    write_csv(rows, ["a", "b"], tmp_path / "t.csv", "schema v1")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "# schema v1"
    back = read_csv(tmp_path / "t.csv")
    assert [float(r["a"]) for r in back] == [0.1, 1e-17]


def test_rgb_converted_to_gray(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "rgb.png")
    assert read_gray(tmp_path / "rgb.png").shape == (4, 4)
