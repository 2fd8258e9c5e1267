from pathlib import Path

import pytest

from lapse3d.config import default_config, load_config, parse_config
from lapse3d.errors import ConfigError


def test_defaults():
    cfg = default_config()
    assert cfg["crf"]["band"] == 2
    assert cfg["tracking"]["threshold"] == 0.3
    assert cfg["evaluate"]["boundary_tol"] == 5.0
    assert cfg["synth"]["dims"] == (96, 96, 96)


def test_values_and_comments(tmp_path):
    text = """
# pipeline settings
[crf]
enabled = no      # skip refinement
gamma1 = 0.5
label_weights = 0:0.5, 3:2

[synth]
dims = 64 64 32
drift = 1, 0, 0
"""
    cfg = parse_config(text, tmp_path / "a.cfg")
    assert cfg["crf"]["enabled"] is False
    assert cfg["crf"]["gamma1"] == 0.5
    assert cfg["crf"]["label_weights"] == {0: 0.5, 3: 2.0}
    assert cfg["synth"]["dims"] == (64, 64, 32)
    assert cfg["synth"]["drift"] == (1.0, 0.0, 0.0)
    assert cfg.line_of("crf", "gamma1") == 5


def test_paths_resolve_against_config_dir(tmp_path):
    for name in ("b.vxg", "a.vxg"):
        (tmp_path / name).write_bytes(b"")
    cfg = parse_config("[input]\nstacks = *.vxg\n[output]\ndir = out\n", tmp_path / "x.cfg")
    assert cfg["input"]["stacks"] == [tmp_path / "a.vxg", tmp_path / "b.vxg"]
    assert cfg["output"]["dir"] == tmp_path / "out"


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("key = 1\n", 1, "outside"),
        ("[crf]\ngamma1 = 1\ngamma1 = 2\n", 3, "duplicate"),
        ("[crf]\n\nnot a pair\n", 3, "malformed"),
        ("[nope]\nx = 1\n", 1, "unknown section"),
        ("[crf]\nbogus = 1\n", 2, "unknown key"),
        ("[crf]\n# note\ngamma1 = abc\n", 3, "gamma1"),
        ("[crf]\nmode = fast\n", 2, "expected one of"),
        ("[crf]\nenabled = maybe\n", 2, "boolean"),
    ],
)
def test_errors_carry_file_and_line(tmp_path, text, line, fragment):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.line == line
    assert str(err.value).startswith(f"{path}:{line}: ")
    assert fragment in str(err.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(tmp_path / "absent.cfg")
    assert err.value.path == Path(tmp_path / "absent.cfg")


def test_require_points_at_section(tmp_path):
    cfg = parse_config("[output]\ndir = .\n[input]\n", tmp_path / "c.cfg")
    with pytest.raises(ConfigError) as err:
        cfg.require("input", "stacks")
    assert err.value.line == 3
