import json
import logging
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import mmm_xml, write_toy_dataset
from motionlang.dataset import (DatasetError, MotionRecord, parse_motion_xml, read_records, read_split,
                                scan_dataset, split_dataset, write_records, write_split)


def test_two_frames_at_hundredth_second_give_100hz():
    names, rate, frames = parse_motion_xml(mmm_xml(["a", "b"], [[0.0, 1.0], [2.0, 3.0]]).encode())
    assert names == ["a", "b"]
    assert rate == pytest.approx(100.0)
    assert frames.shape == (2, 2)


def test_unrelated_elements_are_ignored():
    frames = np.arange(6.0).reshape(3, 2)
    plain = parse_motion_xml(mmm_xml(["a", "b"], frames).encode())
    noisy = parse_motion_xml(mmm_xml(["a", "b"], frames, extra="<Comments><Text>x</Text></Comments>"
                                     "<ModelProcessorConfig scale='1'/>").encode())
    np.testing.assert_array_equal(plain[2], noisy[2])
    assert plain[:2] == noisy[:2]


def test_five_frame_fixture_parses_exactly():
    fixture = np.array([[0.1, -0.25, 3.0],
                        [0.2, -0.5, 2.5],
                        [0.30000000000000004, -0.75, 2.0],
                        [1e-17, 1.5e3, -0.0],
                        [np.pi, -np.e, 0.123456789012345678]])
    names, rate, frames = parse_motion_xml(mmm_xml(["j0", "j1", "j2"], fixture, rate=50.0).encode())
    np.testing.assert_array_equal(frames, fixture)
    assert rate == pytest.approx(50.0)


def test_timesteps_must_increase():
    xml = mmm_xml(["a"], [[0.0], [1.0]]).replace("<Timestep>0.01</Timestep>", "<Timestep>0.0</Timestep>")
    with pytest.raises(DatasetError):
        parse_motion_xml(xml.encode())


def test_inconsistent_joint_count_is_an_error():
    xml = mmm_xml(["a", "b"], [[0.0, 1.0], [2.0, 3.0]]).replace("<JointPosition>2.0 3.0", "<JointPosition>2.0")
    with pytest.raises(DatasetError):
        parse_motion_xml(xml.encode())


def test_scan_returns_sorted_records(tmp_path):
    write_toy_dataset(tmp_path, n=3)
    recs = scan_dataset(tmp_path)
    assert [r.id for r in recs] == ["00000", "00001", "00002"]
    assert recs[1].labels == ["kind1"]
    assert recs[0].annotations == ["a person walks forward"]


def test_empty_annotation_list_is_kept(tmp_path):
    write_toy_dataset(tmp_path, n=2)
    (tmp_path / "00001_annotations.json").write_text("[]")
    recs = scan_dataset(tmp_path)
    assert len(recs) == 2 and recs[1].annotations == []


def test_missing_motion_file_is_skipped_with_warning(tmp_path, caplog):
    write_toy_dataset(tmp_path, n=2)
    os.remove(tmp_path / "00000_mmm.xml")
    with caplog.at_level(logging.WARNING):
        recs = scan_dataset(tmp_path)
    assert [r.id for r in recs] == ["00001"]
    assert "00000" in caplog.text


def test_malformed_json_names_the_file(tmp_path):
    write_toy_dataset(tmp_path, n=1)
    (tmp_path / "00000_meta.json").write_text("{not json")
    with pytest.raises(DatasetError, match="00000_meta.json"):
        scan_dataset(tmp_path)


def test_malformed_xml_names_the_file(tmp_path):
    write_toy_dataset(tmp_path, n=1)
    (tmp_path / "00000_mmm.xml").write_text("<MMM><Motion>")
    with pytest.raises(DatasetError, match="00000_mmm.xml"):
        scan_dataset(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetError, match="nope"):
        scan_dataset(tmp_path / "nope")


def test_record_json_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    rec = MotionRecord("x", ["a", "b"], 100.0, rng.normal(size=(7, 2)) * 1e3, ["hi"], ["walk"])
    write_records(tmp_path / "r.jsonl", [rec])
    back = read_records(tmp_path / "r.jsonl")[0]
    np.testing.assert_array_equal(back.frames, rec.frames)
    assert back.to_json() == rec.to_json()


def test_record_rejects_non_finite():
    with pytest.raises(DatasetError):
        MotionRecord("x", ["a"], 100.0, [[np.nan]])


def test_split_sizes_8_1_1():
    s = split_dataset([str(i) for i in range(10)], (0.8, 0.1, 0.1), seed=0)
    assert (len(s.train), len(s.validation), len(s.test)) == (8, 1, 1)


def test_split_is_deterministic(tmp_path):
    ids = [f"m{i}" for i in range(37)]
    write_split(tmp_path / "a.json", split_dataset(ids, seed=5))
    write_split(tmp_path / "b.json", split_dataset(ids, seed=5))
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    back = read_split(tmp_path / "a.json")
    assert back.seed == 5 and back.ratios == (0.8, 0.1, 0.1)
    assert json.loads((tmp_path / "a.json").read_text())["ratios"] == [0.8, 0.1, 0.1]


def test_different_seeds_move_some_id():
    ids = [str(i) for i in range(10)]
    base = split_dataset(ids, seed=0)
    moved = 0
    for seed in range(1, 11):
        other = split_dataset(ids, seed=seed)
        moved += (other.validation, other.test) != (base.validation, base.test)
    assert moved >= 1


@settings(max_examples=60, deadline=None)
@given(st.sets(st.text(min_size=1, max_size=5), min_size=1, max_size=60),
       st.integers(0, 2**31), st.floats(0.05, 0.4), st.floats(0.05, 0.4))
def test_split_partition_property(ids, seed, r_val, r_test):
    ratios = (1.0 - r_val - r_test, r_val, r_test)
    s = split_dataset(list(ids), ratios, seed)
    parts = [set(s.train), set(s.validation), set(s.test)]
    assert set().union(*parts) == ids
    assert sum(len(p) for p in parts) == len(ids)


def test_split_errors():
    with pytest.raises(DatasetError):
        split_dataset([], seed=0)
    with pytest.raises(DatasetError):
        split_dataset(["a"], (0.5, 0.5, 0.5))
