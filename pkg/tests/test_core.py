import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demo2plan.core import (
    DEFAULT_VOCABULARY,
    Detection,
    Episode,
    FrameRecord,
    episode_to_jsonl,
    make_rng,
    read_episode,
    split_dataset,
    write_episode,
)
from demo2plan.errors import EmptyDataset, ParseError, SchemaError
from demo2plan.geometry import default_camera
from demo2plan.sim import NoiseModel, default_catalog, generate_demo, scene_for


def _tiny_episode(n=3, D=4):
    frames = [FrameRecord(i, i / 22.0, np.arange(D) + i, (), 0, (1.0, 2.0)) for i in range(n)]
    return Episode("tiny", 22.0, n, frames, default_camera(), 0.8, (), feature_dim=D)


def test_vocabulary_has_fifteen_entries():
    assert len(DEFAULT_VOCABULARY) == 15
    for name in ("metal can", "cardboard box", "red plate"):
        assert name in DEFAULT_VOCABULARY


def test_empty_episode_writes_header_only(tmp_path):
    ep = Episode("empty", 22.0, 0, (), default_camera(), 0.8, (), feature_dim=4)
    path = tmp_path / "e.jsonl"
    write_episode(ep, path)
    assert path.read_text().count("\n") == 1
    assert read_episode(path) == ep


def test_generated_episode_has_441_lines_and_round_trips(tmp_path, noisy_episode):
    ep = noisy_episode[0]
    path = tmp_path / "ep.jsonl"
    write_episode(ep, path)
    raw = path.read_bytes()
    assert raw.count(b"\n") == 441 and b"\r" not in raw
    back = read_episode(path)
    assert back == ep
    assert episode_to_jsonl(back) == raw.decode()


def test_header_frame_count_mismatch(tmp_path):
    text = episode_to_jsonl(_tiny_episode(2)).splitlines()
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(text[:2]) + "\n")
    with pytest.raises(SchemaError):
        read_episode(path)


def test_wrong_feature_length(tmp_path):
    lines = episode_to_jsonl(_tiny_episode(2)).splitlines()
    fr = json.loads(lines[2])
    fr["features"] = fr["features"][:-1]
    lines[2] = json.dumps(fr)
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match="line 3"):
        read_episode(path)


def test_malformed_json_reports_line(tmp_path):
    lines = episode_to_jsonl(_tiny_episode(2)).splitlines()
    lines[1] = lines[1][:-5]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as exc:
        read_episode(path)
    assert exc.value.line == 2


def test_label_outside_alphabet():
    frames = [FrameRecord(0, 0.0, [0.0], (), 2)]
    with pytest.raises(SchemaError):
        Episode("x", 22.0, 1, frames, default_camera(), 0.8, (), feature_dim=1)


def test_non_increasing_index():
    frames = [FrameRecord(1, 0.0, [0.0]), FrameRecord(1, 0.1, [0.0])]
    with pytest.raises(SchemaError):
        Episode("x", 22.0, 2, frames, default_camera(), 0.8, (), feature_dim=1)


def test_detection_label_is_argmax_with_name_tiebreak():
    d = Detection((1, 2), (3, 3), {"mug": 0.4, "cup": 0.4, "book": 0.1}, 0.5)
    assert d.label == "cup"
    with pytest.raises(SchemaError):
        Detection((0, 0), (1, 1), {"mug": 1.5}, 0.5)


def test_split_120_gives_96_24():
    items = list(range(120))
    tr, te = split_dataset(items, 0.8, 0)
    assert (len(tr), len(te)) == (96, 24)


def test_split_is_deterministic():
    items = list(range(10))
    assert split_dataset(items, 0.5, 3) == split_dataset(items, 0.5, 3)


def test_split_empty():
    with pytest.raises(EmptyDataset):
        split_dataset([], 0.8, 0)


@given(st.integers(1, 200), st.floats(0.01, 0.99), st.integers(0, 2**32))
def test_split_is_partition(n, f, seed):
    items = list(range(n))
    tr, te = split_dataset(items, f, seed)
    assert sorted(tr + te) == items
    assert not set(tr) & set(te)
    assert len(tr) == int(np.floor(n * f + 0.5))


def test_rng_streams_are_independent_and_stable():
    a = make_rng(5, "x").random(3)
    assert np.array_equal(a, make_rng(5, "x").random(3))
    assert not np.array_equal(a, make_rng(5, "y").random(3))
    assert not np.array_equal(a, make_rng(6, "x").random(3))


@settings(max_examples=50)
@given(st.integers(0, 2**40), st.integers(0, 4), st.booleans())
def test_round_trip_generated_episodes(seed, moved, noisy):
    cat = default_catalog()
    ep = generate_demo(scene_for(cat, moved, seed), seed, NoiseModel() if noisy else NoiseModel.noiseless())
    text = episode_to_jsonl(ep)
    import tempfile, os

    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "e.jsonl")
        with open(p, "w") as fh:
            fh.write(text)
        assert read_episode(p) == ep
