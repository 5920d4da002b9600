# src/utils/log_utils.py
import logging
import os

from config import DCC_LOG_LEVEL

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Console logging for the command-line entry point; library modules only call getLogger."""
    logging.basicConfig(level=(level or DCC_LOG_LEVEL).upper(), format=LOG_FORMAT)


def attach_file_log(path: str, logger_name: str = "") -> logging.Handler:
    """Mirror records of ``logger_name`` (root by default) into ``path``; returns the handler to detach later."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    open(path, "a").close()
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(logging.INFO)
    target = logging.getLogger(logger_name)
    target.addHandler(handler)
    if target.level == logging.NOTSET or target.level > logging.INFO:
        target.setLevel(logging.INFO)
    return handler


def detach_file_log(handler: logging.Handler, logger_name: str = "") -> None:
    logging.getLogger(logger_name).removeHandler(handler)
    handler.close()
