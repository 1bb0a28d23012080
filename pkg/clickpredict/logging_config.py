import logging

LOG_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR
}
"""Command-line (string-based) log-level mapping to logging module levels."""

LOG_FORMAT = "%(asctime)-15s [%(levelname)s] %(message)s"
"""Record format used by the console script."""

NOISY_LOGGERS = ["matplotlib", "PIL"]
"""Third-party loggers that are capped at WARNING."""


def configure_logging(level_name):
    """Set up root logging for a command-line run.

    :param level_name: One of the keys of :attr:`LOG_LEVELS`.
    :type level_name: str
    :raises ValueError: on an unknown level name.
    """
    if level_name not in LOG_LEVELS:
        raise ValueError("Illegal log-level argument: {}".format(level_name))
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    logging.root.setLevel(LOG_LEVELS[level_name])
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
