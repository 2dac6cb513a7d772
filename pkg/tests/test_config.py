import pytest

from taskattn.config import CONFIG_ENV, ConfigError, KEYS, dump, parse_file, resolve


def test_defaults():
    cfg = resolve(None, {})
    assert cfg.run.scheme == "DA" and cfg.train.lr == 0.001 and cfg.synth.n_domains == 4


def test_precedence_cli_over_file_over_default(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# experiment\nlr = 0.5\nbatch_size = 8  # small\n\nscheme = SA\n")
    cfg = resolve(str(p), {"lr": "0.25"})
    assert cfg.train.lr == 0.25 and cfg.train.batch_size == 8 and cfg.run.scheme == "SA"
    assert cfg.train.max_epochs == 10


def test_env_supplies_default_path(tmp_path, monkeypatch):
    p = tmp_path / "env.cfg"
    p.write_text("max_epochs = 3\n")
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert resolve(None, {}).train.max_epochs == 3


def test_typed_values(tmp_path):
    cfg = resolve(None, {"tasks": "a, b", "shuffle_labels": "yes", "task_weights": "a:2,b:0.5",
                         "synth_conflict_rate": "0.25", "freeze-embeddings": "true"})
    assert cfg.run.tasks == ["a", "b"] and cfg.run.shuffle_labels is True
    assert cfg.train.task_weights == {"a": 2.0, "b": 0.5} and cfg.train.freeze_embeddings
    assert cfg.synth.conflict_rate == 0.25


@pytest.mark.parametrize("overrides", [{"lr": "fast"}, {"nope": "1"}, {"scheme": "XX"},
                                       {"dropout": "1.5"}, {"shuffle_labels": "maybe"},
                                       {"synth_min_len": "2"}])
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        resolve(None, overrides)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_file(str(tmp_path / "missing.cfg"))
    (tmp_path / "bad.cfg").write_text("lr 0.1\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_file(str(tmp_path / "bad.cfg"))


def test_dump_covers_every_key():
    assert set(dump(resolve(None, {}))) == set(KEYS)


def test_docs_list_every_key():
    from pathlib import Path
    doc = (Path(__file__).resolve().parents[1] / "docs" / "config.md").read_text()
    missing = [k for k in KEYS if f"`{k}`" not in doc]
    assert not missing, missing
