"""Flat run configuration.

Every tunable is a key of :attr:`DEFAULTS`. A run resolves its values from the
table defaults, then an optional ``key=value`` config file, then command-line
flags. The resolved configuration is echoed (sorted ``key=value`` lines) into
every run directory.
"""
import calendar
import logging
from collections import OrderedDict, namedtuple

import dateutil.parser

from clickpredict.features import ALL

log = logging.getLogger(__name__)

Option = namedtuple("Option", ["default", "type", "help"])
"""A config key's default (as text), value type and help string."""

DEFAULTS = OrderedDict([
    ("log_level", Option("INFO", "str", "Log output level (DEBUG, INFO, WARNING, ERROR).")),
    ("seed", Option("0", "int", "Seed of every random choice (EM inits, splits, training).")),
    ("threads", Option("1", "int", "Worker threads for E-steps and batch gradients.")),
    ("deterministic", Option("true", "bool", "Sum threaded LSTM batch gradients in batch order (bitwise repeatable).")),
    ("gap_seconds", Option("3600", "int", "Inactivity (seconds) that must be exceeded to start a new session.")),
    ("log_format", Option("csv", "str", "Clickstream encoding: csv or jsonl.")),
    ("clicks", Option("", "str", "Clickstream log file.")),
    ("grades", Option("", "str", "Grades CSV (student_id,grade).")),
    ("categories", Option("", "str", "Category map CSV; empty uses the shipped 46-category map.")),
    ("course_name", Option("course", "str", "Course name recorded in results.")),
    ("course_start", Option("", "str", "Course start: epoch seconds or a date; empty uses the earliest click.")),
    ("out_dir", Option("runs", "str", "Root directory of run directories.")),
    ("ingested", Option("", "str", "Output directory of an ingest run.")),
    ("transfer_ingested", Option("", "str", "Ingest run of the course to transfer to.")),
    ("K", Option("10", "int", "Number of behavior states.")),
    ("max_iter", Option("200", "int", "Maximum EM iterations.")),
    ("tol", Option("1e-6", "float", "Relative log-likelihood tolerance of EM.")),
    ("epsilon", Option("1e-8", "float", "Probability floor of fitted parameters.")),
    ("n_init", Option("1", "int", "EM initialisations; the best final log-likelihood wins.")),
    ("behavior_model", Option("", "str", "Behavior model file used by decode and extract.")),
    ("mmm_model", Option("", "str", "Mixture behavior model file (mmm_state features).")),
    ("hmm_model", Option("", "str", "Hidden Markov behavior model file (hmm_state features).")),
    ("label_threshold", Option("0", "float", "A student's label is 1 iff grade > label_threshold.")),
    ("min_clicks", Option("101", "int", "Fewest clicks a student needs to be kept.")),
    ("train_frac", Option("0.8", "float", "Share of students in the training split.")),
    ("feature_set", Option("hmm_state", "str", "Feature set of train/evaluate/extract.")),
    ("feature_sets", Option("raw,category,mmm_state,hmm_state", "list", "Feature sets of the grid.")),
    ("model", Option("lstm", "str", "Model kind of train/evaluate: lstm, svm_l, svm_c or mlp.")),
    ("models", Option("lstm,svm_l,svm_c,mlp", "list", "Model kinds of the grid.")),
    ("dimension", Option("course_days", "str", "Prefix dimension of train/evaluate/extract.")),
    ("value", Option(ALL, "str", "Prefix value of train/evaluate/extract (positive integer or All).")),
    ("dimensions", Option("course_days,student_days,n_clicks,n_states", "list", "Prefix dimensions of the grid.")),
    ("course_days", Option("7,18,35,All", "values", "Grid values of course_days.")),
    ("student_days", Option("7,18,35,All", "values", "Grid values of student_days.")),
    ("n_clicks", Option("100,1000,1959,All", "values", "Grid values of n_clicks.")),
    ("n_states", Option("10,25,50,All", "values", "Grid values of n_states (state-sequence prefix lengths).")),
    ("repeats", Option("1", "int", "Seeded repetitions per grid cell; >= 2 adds significance tests.")),
    ("embedding_dim", Option("32", "int", "LSTM token embedding size.")),
    ("hidden_dim", Option("64", "int", "LSTM hidden size.")),
    ("learning_rate", Option("1e-3", "float", "LSTM Adam learning rate.")),
    ("epochs", Option("20", "int", "LSTM training epochs.")),
    ("batch_size", Option("32", "int", "Mini-batch size of LSTM and MLP training.")),
    ("dropout", Option("0.5", "float", "Dropout probability on the pooled LSTM output.")),
    ("max_seq_len", Option("2000", "int", "Sequences are cut to their earliest max_seq_len tokens.")),
    ("svm_lambda", Option("1e-4", "float", "L2 regularization of the linear SVM.")),
    ("svm_epochs", Option("50", "int", "Passes of the SVM subgradient solver.")),
    ("mlp_hidden", Option("100", "int", "MLP hidden units.")),
    ("mlp_epochs", Option("200", "int", "MLP training epochs.")),
    ("mlp_learning_rate", Option("1e-3", "float", "MLP Adam learning rate.")),
    ("ngram_n", Option("1", "int", "N-gram length of analyze-ngrams (1 to 3).")),
    ("top_k", Option("5", "int", "N-grams reported per class.")),
    ("classifier", Option("", "str", "Trained classifier file (evaluate).")),
    ("results", Option("", "str", "Results CSV (plot).")),
    ("synth_spec", Option("", "str", "Flat generator spec file; empty uses the default spec.")),
    ("synth_students", Option("2000", "int", "Students of the default synthetic spec.")),
    ("synth_states", Option("10", "int", "True behavior states of the default synthetic spec.")),
    ("synth_high_share", Option("0.55", "float", "Share of high graders in the default synthetic spec.")),
    ("synth_order_only", Option("false", "bool", "Generate the order-only pair course instead.")),
    ("synth_pairs", Option("1000", "int", "Student pairs of the order-only course.")),
])
"""Every config key with its default, type and help."""


class ConfigError(ValueError):
    """Raised for unknown keys and values that do not parse."""
    pass


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: {!r}".format(text))


def _parse_list(text):
    return tuple(item.strip() for item in text.split(",") if item.strip())


def _parse_values(text):
    values = []
    for item in _parse_list(text):
        if item.lower() == ALL.lower():
            values.append(ALL)
            continue
        value = int(item)
        if value < 1:
            raise ValueError("prefix values must be positive, got {}".format(value))
        values.append(value)
    return tuple(values)


_PARSERS = {"str": str, "int": int, "float": float, "bool": _parse_bool, "list": _parse_list,
            "values": _parse_values}


def parse_value(key, text):
    """Convert the text of one key to its typed value.

    :raises ConfigError: for an unknown key or an unparseable value.
    """
    if key not in DEFAULTS:
        raise ConfigError("unknown config key: {}".format(key))
    try:
        return _PARSERS[DEFAULTS[key].type](text)
    except ValueError as e:
        raise ConfigError("bad value for {}: {!r} ({})".format(key, text, e))


def parse_config_text(text):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped.

    :return: ``key -> value text``
    """
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("config line {}: expected key=value, got {!r}".format(number, line))
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError("config line {}: unknown key {}".format(number, key))
        values[key] = value
    return values


def parse_course_start(text):
    """Epoch seconds of a course start given as an integer or a date string
    (a date without zone is taken as UTC). Empty text gives ``None``."""
    text = text.strip()
    if not text:
        return None
    if text.lstrip("-").isdigit():
        return int(text)
    try:
        moment = dateutil.parser.parse(text)
    except (ValueError, OverflowError) as e:
        raise ConfigError("bad course_start {!r}: {}".format(text, e))
    if moment.tzinfo is not None:
        return int(moment.timestamp())
    return calendar.timegm(moment.timetuple())


class RunConfig(object):
    """The resolved configuration of one run: value texts for every key of
    :attr:`DEFAULTS` plus their typed values."""

    def __init__(self, texts):
        self.texts = OrderedDict((key, texts[key]) for key in DEFAULTS)
        self.values = {key: parse_value(key, text) for key, text in self.texts.items()}

    @classmethod
    def resolve(cls, file_text=None, overrides=None):
        """Defaults, then ``file_text`` (``key=value`` lines), then ``overrides`` (key -> text)."""
        texts = {key: option.default for key, option in DEFAULTS.items()}
        if file_text:
            texts.update(parse_config_text(file_text))
        for key, value in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError("unknown config key: {}".format(key))
            if value is not None:
                texts[key] = str(value)
        return cls(texts)

    def __getitem__(self, key):
        return self.values[key]

    def __getattr__(self, key):
        values = self.__dict__.get("values")
        if values is not None and key in values:
            return values[key]
        raise AttributeError(key)

    def echo(self):
        """Sorted ``key=value`` lines of the resolved configuration."""
        return "".join("{}={}\n".format(key, self.texts[key]) for key in sorted(self.texts))

    def dimension_values(self, dimension):
        return self.values[dimension]
