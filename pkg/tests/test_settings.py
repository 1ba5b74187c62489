import logging
import os

from logger_setup import setup_logging
from settings import load_settings, worker_count


def test_settings_file_values():
    config = load_settings()
    assert config.getfloat('Numerics', 'eig_tolerance') == 1e-9
    assert config.getfloat('Simulation', 'dt') == 1e-3
    assert config.get('Output', 'output_dir') == "results"


def test_missing_settings_file_falls_back(tmp_path):
    config = load_settings(str(tmp_path / "absent.ini"))
    assert config.getint('Scan', 'threads', fallback=0) == 0


def test_worker_count_env_override(monkeypatch):
    monkeypatch.setenv("DIFFPASS_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("DIFFPASS_THREADS", "zero")
    assert worker_count(load_settings()) == (os.cpu_count() or 1)
    monkeypatch.delenv("DIFFPASS_THREADS")
    assert worker_count() >= 1


def test_setup_logging_does_not_stack_handlers():
    setup_logging(log_file="test.log", console_level=logging.WARNING)
    setup_logging(log_file="test.log", console_level=logging.WARNING)
    tagged = [h for h in logging.getLogger().handlers if getattr(h, "_diffpass_handler", False)]
    assert len(tagged) == 2
