import pytest

from lidarnav.config import SCHEMA, ConfigError, load_config, schema_text


def test_defaults_are_typed():
    cfg = load_config(environ={})
    assert cfg["train"]["epochs"] == 8 and cfg["train"]["rotate"] is True
    assert cfg["bench"]["sizes"] == [10000, 50000, 200000]
    assert cfg["sim"]["tracks"] == ["test"]
    assert set(cfg) == set(SCHEMA)


def test_file_then_environment_precedence(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nepochs = 3\nmode = deterministic\n[run]\nseeds = 7\n")
    cfg = load_config(path, environ={"LIDARNAV_RUN_SEEDS": "9", "OTHER": "x"})
    assert cfg["train"]["epochs"] == 3 and cfg["train"]["mode"] == "deterministic"
    assert cfg["run"]["seeds"] == 9


def test_case_of_keys_is_preserved(tmp_path):
    path = tmp_path / "k.ini"
    path.write_text("[data]\nK = 6\n")
    assert load_config(path, environ={})["data"]["K"] == 6
    path.write_text("[data]\nk = 6\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(path, environ={})


@pytest.mark.parametrize("text, match", [
    ("[nosuch]\na = 1\n", "unknown section"),
    ("[train]\nepoch = 1\n", "unknown key"),
    ("[train]\nepochs = many\n", "epochs"),
    ("[train]\nlr0 = -1\n", "non-negative"),
    ("[fusion]\nmode = median\n", "mode"),
    ("[train]\nrotate = maybe\n", "boolean"),
    ("not an ini", "cannot read"),
])
def test_invalid_files(tmp_path, text, match):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path, environ={})


def test_unknown_environment_override():
    with pytest.raises(ConfigError, match="LIDARNAV_TRAIN_EPOCH"):
        load_config(environ={"LIDARNAV_TRAIN_EPOCH": "2"})


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.ini", environ={})


def test_schema_text_lists_every_key():
    text = schema_text()
    assert len(text.splitlines()) == sum(len(v) for v in SCHEMA.values())
    assert "[fusion] mode = all  (one of none/uniform/evidential/all)" in text
