import logging
import os
import sys


def setup_logging(log_file="diffpass.log", log_level=logging.DEBUG, console_level=logging.INFO):
    """Configures the logging system."""

    log_directory = os.path.join(os.path.dirname(os.path.abspath(__file__)), "logs")
    os.makedirs(log_directory, exist_ok=True)  # Ensure log directory exists

    # Get the root logger
    logger = logging.getLogger()
    logger.setLevel(log_level)

    # Repeated CLI invocations in one process (tests) must not stack handlers
    for handler in list(logger.handlers):
        if getattr(handler, "_diffpass_handler", False):
            logger.removeHandler(handler)
            handler.close()

    # Create file handler (writes to file)
    file_handler = logging.FileHandler(os.path.join(log_directory, log_file), mode='w', encoding='utf-8')
    file_handler.setLevel(logging.DEBUG)  # Log everything to file

    # Console handler on stderr; stdout carries JSON reports
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(console_level)

    # Create formatter
    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(name)s - %(filename)s - %(lineno)d - %(message)s')
    file_handler.setFormatter(formatter)
    console_handler.setFormatter(formatter)

    for handler in (file_handler, console_handler):
        handler._diffpass_handler = True
        logger.addHandler(handler)

    logger.debug("Root logging initialized.")
