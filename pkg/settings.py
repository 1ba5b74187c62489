import configparser
import logging
import os

logger = logging.getLogger(__name__)

SETTINGS_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'settings.ini')


def load_settings(path=None):
    """Reads settings.ini; a missing file gives an empty parser so lookups use their fallbacks."""
    config = configparser.ConfigParser()
    settings_path = path or SETTINGS_FILE
    read_files = config.read(settings_path)
    if read_files:
        logger.debug(f"Settings loaded from {settings_path}")
    else:
        logger.warning(f"Settings file not found: {settings_path}. Using built-in defaults.")
    return config


def worker_count(config=None):
    """Number of scan/ensemble workers: DIFFPASS_THREADS overrides [Scan] threads, 0 means auto."""
    raw = os.environ.get('DIFFPASS_THREADS')
    if raw is not None:
        try:
            threads = int(raw)
        except ValueError:
            logger.warning(f"Ignoring non-integer DIFFPASS_THREADS={raw!r}")
            threads = None
    else:
        threads = None

    if threads is None:
        threads = config.getint('Scan', 'threads', fallback=0) if config is not None else 0

    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads
