from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from demo2plan.config import PipelineConfig, load_config, parse_config
from demo2plan.errors import ConfigError, IoError
from demo2plan.kinematics import tool_position
from demo2plan.sim import NoiseModel

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_documented_defaults_equal_builtin():
    cfg = load_config(CONFIGS / "default.toml")
    assert replace(cfg, source=None) == PipelineConfig()


def test_empty_file_is_defaults():
    assert parse_config("") == PipelineConfig()


def test_shipped_variants_parse():
    assert load_config(CONFIGS / "noiseless.toml").noise == NoiseModel.noiseless()
    shape = load_config(CONFIGS / "paper-shape.toml")
    assert shape.train.layers == 28


def test_overrides_and_int_to_float():
    cfg = parse_config("[train]\nlr = 1\nepochs = 2\n[vote]\nmax_window = 4\n")
    assert cfg.train.lr == 1.0 and isinstance(cfg.train.lr, float)
    assert cfg.train.epochs == 2 and cfg.vote.max_window == 4
    assert cfg.train_hyper(epochs=0).epochs == 0


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("[train]\nlr = 0.1\nepochz = 3\n", 3, "unknown key"),
        ("\n[train]\nepochs = 1.5\n", 3, "integer"),
        ("[camera]\nposition = [0.0, 1.0]\n", 2, "3 entries"),
        ("[wat]\nx = 1\n", 1, "unknown section"),
        ("chain = \"scara\"\n", 1, "unknown chain"),
        ("[noise]\npreset = \"loud\"\n", 2, "unknown noise preset"),
        ("[dataset]\n\ntrain_fraction = 1.0\n", 3, "strictly between"),
        ("[planning]\nd_min = \"far\"\n", 2, "number"),
    ],
)
def test_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    msg = str(ei.value)
    assert msg.startswith(f"line {line}:") and fragment in msg


def test_invalid_toml():
    with pytest.raises(ConfigError, match="invalid TOML"):
        parse_config("[train\nlr=1")


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_config(tmp_path / "nope.toml")


def test_catalog_requires_a_graspable_object():
    text = '[[catalog]]\nid = "plate"\nclass = "red plate"\nradius = 0.07\nheight = 0.02\ngraspable = false\n'
    with pytest.raises(ConfigError, match="graspable"):
        parse_config(text)


def test_custom_chain_table():
    text = """
[chain]
name = "two-link"
tool_offset = [1.0, 0.0, 0.0]

[[chain.joints]]
axis = [0.0, 0.0, 1.0]
offset = [0.0, 0.0, 0.0]

[[chain.joints]]
axis = [0.0, 0.0, 1.0]
offset = [1.0, 0.0, 0.0]
"""
    chain = parse_config(text).kinematic_chain()
    assert chain.dof == 2
    assert np.allclose(tool_position(chain, [0.0, 0.0]), [2.0, 0.0, 0.0])


def test_chain_preset_by_name():
    assert parse_config('chain = "planar-2r"\n').kinematic_chain().dof == 2
    assert parse_config('[chain]\npreset = "planar-2r"\n').kinematic_chain().dof == 2
