import importlib

import pytest

import config


@pytest.fixture
def reload_config(monkeypatch):
    """Re-evaluate config.py under a patched environment, then restore it."""

    def reload(**env):
        for key, value in env.items():
            monkeypatch.setenv(key, value)
        return importlib.reload(config)

    yield reload
    monkeypatch.undo()
    importlib.reload(config)


def test_defaults(reload_config, monkeypatch):
    for key in ("SEER_OUTPUT_DIR", "SEER_LOG_LEVEL", "SEER_OVERLAP"):
        monkeypatch.delenv(key, raising=False)
    module = reload_config()
    assert module.Config.OUTPUT_DIR == "output"
    assert module.Config.LOG_LEVEL == "INFO"
    assert module.Config.OVERLAP is True


def test_environment_overrides(reload_config):
    module = reload_config(SEER_OUTPUT_DIR="/tmp/runs", SEER_LOG_LEVEL="debug", SEER_OVERLAP="false")
    assert module.Config.OUTPUT_DIR == "/tmp/runs"
    assert module.Config.LOG_LEVEL == "DEBUG"
    assert module.Config.OVERLAP is False


def test_invalid_log_level(reload_config):
    with pytest.raises(ValueError, match="SEER_LOG_LEVEL"):
        reload_config(SEER_LOG_LEVEL="chatty")


def test_test_config_is_quiet_and_synchronous():
    assert config.TestConfig.LOG_LEVEL == "WARNING"
    assert config.TestConfig.OVERLAP is False
    assert config.TestConfig.TESTING is True
