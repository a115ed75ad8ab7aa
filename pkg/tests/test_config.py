import pytest

from octsdf.config import ConfigError, RunConfig, build_config, read_config_file, write_config_file


def test_defaults_valid():
    cfg = RunConfig()
    assert cfg.effective_fd_step == pytest.approx(0.05)
    assert cfg.path("field_file", "field.bin").endswith("field.bin")


def test_file_parse_and_types(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nleaf_size = 0.2\nlevels=3\nresume = yes\nbbox = -1, -1, -1, 1 1 1  # box\nscene = room\n")
    v = read_config_file(p)
    assert v == {"leaf_size": 0.2, "levels": 3, "resume": True, "bbox": (-1.0, -1.0, -1.0, 1.0, 1.0, 1.0),
                 "scene": "room"}


@pytest.mark.parametrize("text,match", [
    ("bogus = 1\n", "unknown config key"),
    ("levels = many\n", "bad value for levels"),
    ("just words\n", "expected 'key = value'"),
    ("resume = maybe\n", "bad value for resume"),
])
def test_file_errors_name_line(tmp_path, text, match):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError, match=match) as exc:
        read_config_file(p)
    assert ":1:" in str(exc.value)


@pytest.mark.parametrize("key,value", [
    ("leaf_size", 0.0), ("levels", 0), ("sigma", -1.0), ("batch_size", 0), ("mesh_resolution", 0.0),
    ("tau", 0.0), ("mesh_format", "stl"), ("scene", "castle"), ("bbox", (1.0, 2.0)), ("mesh_mask_level", 4),
])
def test_validation(key, value):
    with pytest.raises(ConfigError, match=key):
        build_config({}, {key: value})


def test_flags_override_file():
    cfg = build_config({"leaf_size": 0.2, "seed": 4}, {"leaf_size": 0.3, "seed": None})
    assert cfg.leaf_size == 0.3 and cfg.seed == 4


def test_write_read_roundtrip(tmp_path):
    cfg = build_config({}, {"bbox": (0.0, 0.0, 0.0, 1.0, 2.0, 3.0), "lambda_r": 5.0, "scene": "room"})
    write_config_file(cfg, tmp_path / "c.cfg")
    assert build_config(read_config_file(tmp_path / "c.cfg")) == cfg


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_config_file(tmp_path / "nope.cfg")
