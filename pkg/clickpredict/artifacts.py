"""Module with methods for laying out and writing run artifacts.

Every command writes into its own run directory under the configured output
root. Directories are named by the command and a content hash of the resolved
configuration, so re-running a command with identical inputs and config
rewrites the same directory with identical bytes.
"""
import codecs
import hashlib
import json
import logging
import os
import tempfile

try:
    from importlib.metadata import version as _dist_version, PackageNotFoundError
except ImportError:  # pragma: no cover
    _dist_version = None
    PackageNotFoundError = Exception

log = logging.getLogger(__name__)

FORMAT_VERSIONS = {
    "clickstream": "1",
    "categories": "1",
    "grades": "1",
    "sessions": "1",
    "behavior_model": "1",
    "behaviors": "1",
    "transitions": "1",
    "states": "1",
    "features": "1",
    "ngrams": "1",
    "classifier": "1",
    "training_log": "1",
    "results": "1",
    "significance": "1",
    "exclusions": "1",
    "synthetic_truth": "1",
    "config": "1",
}
"""Format-version identifiers of every emitted file kind."""

config_file = "config.txt"
"""Name of the resolved-config echo written into every run directory."""


class FormatError(ValueError):
    """Raised when an input artifact does not match its expected format."""
    pass


def package_version():
    """Return the installed version of the package, or ``"0+unknown"``."""
    if _dist_version is None:
        return "0+unknown"
    try:
        return _dist_version("clickpredict")
    except PackageNotFoundError:
        return "0+unknown"


def config_digest(config_text):
    """Returns the first 12 hex digits of the sha256 of a config echo."""
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:12]


def run_dir_name(command, config_text):
    """Returns the run directory name for a command and its resolved config.
    Run directories follow the pattern ``<command>-<digest>``, for example
    ``fit-hmm-3f2a9c01b7de``.

    :param command: Subcommand name.
    :type command: str
    :param config_text: Resolved config echo (see :func:`clickpredict.config.echo`).
    :type config_text: str
    :rtype: str
    """
    return "{}-{}".format(command, config_digest(config_text))


def prepare_run_dir(out_dir, command, config_text):
    """Create (if needed) the run directory for a command and echo the
    resolved config into it.

    :return: Path of the run directory.
    :rtype: str
    """
    run_dir = os.path.join(out_dir, run_dir_name(command, config_text))
    if not os.path.isdir(run_dir):
        os.makedirs(run_dir)
    write_text(os.path.join(run_dir, config_file), config_text)
    log.info("writing %s artifacts to %s", command, run_dir)
    return run_dir


def write_text(dest, text):
    """Atomically write a UTF-8 text file: the content goes to a temporary file
    in the destination directory which is then renamed over ``dest``."""
    directory = os.path.dirname(os.path.abspath(dest))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(dest))
    os.close(fd)
    try:
        with codecs.open(tmp, encoding="utf-8", mode="w") as f:
            f.write(text)
        os.replace(tmp, dest)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(dest, document):
    """Write a JSON document with a stable key order (insertion order of ``document``)."""
    write_text(dest, json.dumps(document, ensure_ascii=False, indent=1) + "\n")


def read_json(path):
    with codecs.open(path, encoding="utf-8", mode="r") as f:
        return json.load(f)


def write_table(dest, frame):
    """Write a :class:`pandas.DataFrame` as CSV with ``\\n`` line endings and no index."""
    write_text(dest, frame.to_csv(index=False, lineterminator="\n"))


def require_columns(frame, columns, what):
    """Raise :class:`FormatError` unless ``frame`` has all ``columns``."""
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise FormatError("{}: missing column(s) {}".format(what, ", ".join(missing)))
