import json
import logging

from utils.logger import LoggerContext, log_performance, resolve_level, setup_logger


def test_explicit_level_wins(monkeypatch):
    monkeypatch.setenv("CTALVAE_LOG", "debug")
    assert resolve_level("error") == logging.ERROR


def test_level_from_environment(monkeypatch):
    monkeypatch.setenv("CTALVAE_LOG", "Debug")
    assert resolve_level() == logging.DEBUG


def test_unknown_environment_value_falls_back(monkeypatch):
    monkeypatch.setenv("CTALVAE_LOG", "chatty")
    assert resolve_level() == logging.INFO


def test_default_level(monkeypatch):
    monkeypatch.delenv("CTALVAE_LOG", raising=False)
    assert resolve_level() == logging.INFO


def test_json_records_carry_context(capsys):
    logger = setup_logger("ctalvae.test_json", level="info", json_format=True)

    with LoggerContext(logger, seed=3, kind="vae"):
        logger.info("epoch done")
    logger.info("outside")

    lines = [json.loads(line) for line in capsys.readouterr().err.splitlines()]
    assert lines[0]["message"] == "epoch done"
    assert lines[0]["level"] == "INFO"
    assert lines[0]["context"] == {"seed": 3, "kind": "vae"}
    assert lines[1]["context"] == {}


def test_child_loggers_inherit_parent_context(capsys):
    parent = setup_logger("ctalvae.test_parent", level="debug")
    child = logging.getLogger("ctalvae.test_parent.child")

    with LoggerContext(parent, phase="adapt"):
        child.debug("step")

    assert "[phase=adapt]" in capsys.readouterr().err


def test_log_performance_reports_duration(capsys):
    logger = setup_logger("ctalvae.test_perf", level="info")

    @log_performance(logger)
    def work():
        return 42

    assert work() == 42
    assert "work completed in" in capsys.readouterr().err


def test_log_file(tmp_path):
    logger = setup_logger("ctalvae.test_file", level="info", log_file="run.log", log_dir=str(tmp_path))
    logger.info("kept in the file")
    for handler in logger.handlers:
        handler.flush()
    assert "kept in the file" in (tmp_path / "run.log").read_text()


def test_cleared_context_is_not_stamped(capsys):
    logger = setup_logger("ctalvae.test_clear", level="info", json_format=True)

    logger.set_context(command="bench", seed=1)
    logger.info("with context")
    logger.clear_context()
    logger.info("after clear")

    lines = [json.loads(line) for line in capsys.readouterr().err.splitlines()]
    assert lines[0]["context"] == {"command": "bench", "seed": 1}
    assert lines[1]["context"] == {}
