import pytest

from skillemb.config import ConfigError, ExperimentConfig


def test_roundtrip_through_ini(tmp_path):
    cfg = ExperimentConfig().apply_overrides(["losses.alpha=0.25", "dataio.train_tasks=stack",
                                              "trainer.strict_determinism=false"])
    path = tmp_path / "c.ini"
    cfg.save(path)
    back = ExperimentConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.losses.alpha == 0.25
    assert back.dataio.train_tasks == ("stack",)
    assert back.trainer.strict_determinism is False


def test_dict_roundtrip_and_copy_independent():
    cfg = ExperimentConfig()
    other = cfg.copy()
    other.losses.beta = 7.0
    assert cfg.losses.beta == 1.0
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("override", ["losses.alpah=0.1", "lossez.alpha=0.1", "alpha=0.1",
                                      "losses.alpha", "losses.alpha=abc", "trainer.steps=1.5",
                                      "trainer.strict_determinism=maybe"])
def test_bad_overrides_raise(override):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig().apply_overrides([override])
    assert info.value.key is not None


def test_unknown_key_in_file_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("[losses]\nalpah = 0.1\n")


def test_numeric_tuple_parsing():
    cfg = ExperimentConfig().apply_overrides(["dataio.brightness=0.5, 1.5"])
    assert cfg.dataio.brightness == (0.5, 1.5)
