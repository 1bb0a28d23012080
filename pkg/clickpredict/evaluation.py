"""Labeling, filtering and splitting of students, the prefix experiment grid,
cross-course transfer and results emission.

A grid *cell* is one combination of prefix dimension, prefix value, feature
set, model kind, split and repeat seed. Feature-set labels are ``raw``,
``category``, ``mmm_state`` and ``hmm_state``; the last two are the state
feature family decoded with a mixture or a hidden Markov behavior model.
"""
import logging
import math
import os
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from clickpredict import artifacts
from clickpredict.classifiers import ClassifierConfig, predict_labels, supported_models, train_classifier
from clickpredict.features import ALL, PrefixSpec, build_sequence, supported_dimensions, truncate_prefix
from clickpredict.ingest import (DEFAULT_GAP_SECONDS, Vocabulary, apply_categories, build_vocab, events_from_frame,
                                 load_category_map, parse_grades, segment_sessions)
from clickpredict.stats import compare_to_weakest

log = logging.getLogger(__name__)

DEFAULT_MIN_CLICKS = 101
"""Fewest clicks a student needs to be kept."""

DEFAULT_TRAIN_FRAC = 0.8

FEATURE_FAMILIES = OrderedDict([("raw", "raw"), ("category", "category"), ("mmm_state", "state"),
                                ("hmm_state", "state")])
"""Grid feature-set label -> feature family of its samples."""

STATE_MODELS = {"mmm_state": "mmm", "hmm_state": "hmm"}
"""Feature-set label -> kind of behavior model it is decoded with."""

DEFAULT_DIMENSION_VALUES = OrderedDict([
    ("course_days", (7, 18, 35, ALL)),
    ("student_days", (7, 18, 35, ALL)),
    ("n_clicks", (100, 1000, 1959, ALL)),
    ("n_states", (10, 25, 50, ALL)),
])
"""Default prefix values per dimension."""

RESULT_COLUMNS = ["course", "dimension", "value", "feature_set", "model", "split", "seed", "accuracy", "n"]
EXCLUSION_COLUMNS = ["reason", "dimension", "value", "feature_set", "split", "count"]

UNSEEN_CLICK_TYPE = "__unseen__"
"""Raw-vocabulary token standing in for click types no training student produced."""

supported_splits = ["train", "val", "test", "transfer"]


@dataclass(frozen=True)
class StudentRecord:
    """One student of a course with everything the grid needs."""
    student_id: str
    grade: Optional[float]
    total_clicks: int
    sessions: Tuple = ()
    events: Tuple = ()
    sequences: Dict = field(default_factory=dict)


@dataclass
class Course:
    """An ingested course: categorised events and sessions per student plus grades."""
    name: str
    category_map: object
    events: Dict
    sessions: Dict
    grades: Dict
    course_start_ts: int
    raw_vocab: Vocabulary = None

    def __post_init__(self):
        if self.raw_vocab is None:
            self.raw_vocab = build_vocab(e.raw_type for evs in self.events.values() for e in evs)

    @property
    def student_ids(self):
        return list(self.events)

    @classmethod
    def from_events(cls, name, events_by_student, grades, category_map, gap_seconds=DEFAULT_GAP_SECONDS,
                    course_start_ts=None):
        """Categorise and sessionise parsed events.

        :param course_start_ts: Course start; ``None`` uses the earliest click.
        """
        events, sessions = {}, {}
        for student_id, student_events in events_by_student.items():
            categorised = apply_categories(student_events, category_map)
            events[student_id] = categorised
            sessions[student_id] = segment_sessions(categorised, category_map.n_categories, gap_seconds)
        if course_start_ts is None:
            firsts = [evs[0].timestamp for evs in events.values() if evs]
            course_start_ts = min(firsts) if firsts else 0
        return cls(name=name, category_map=category_map, events=events, sessions=sessions, grades=dict(grades),
                   course_start_ts=int(course_start_ts))

    @classmethod
    def load(cls, directory):
        """Load the output directory of the ``ingest`` command."""
        report = artifacts.read_json(os.path.join(directory, "ingest_report.json"))
        category_map = load_category_map(os.path.join(directory, "categories.csv"))
        frame = pd.read_csv(os.path.join(directory, "events.csv"), dtype={"student_id": str, "click_type": str},
                            keep_default_na=False)
        events = events_from_frame(frame)
        grades, _ = parse_grades(os.path.join(directory, "grades.csv"))
        gap = int(report.get("gap_seconds", DEFAULT_GAP_SECONDS))
        sessions = {sid: segment_sessions(evs, category_map.n_categories, gap) for sid, evs in events.items()}
        return cls(name=report.get("course_name", os.path.basename(os.path.normpath(directory))),
                   category_map=category_map, events=events, sessions=sessions, grades=grades,
                   course_start_ts=int(report["course_start_ts"]))


def make_label(grade, threshold=0.0):
    """``1`` iff ``grade > threshold``.

    :raises ValueError: for a missing grade or one outside [0, 100].
    """
    if grade is None or not 0.0 <= grade <= 100.0:
        raise ValueError("grade must be a number in [0, 100], got {!r}".format(grade))
    return 1 if grade > threshold else 0


def build_records(course):
    """One :class:`StudentRecord` per student of the clickstream (``grade`` is
    ``None`` for students without one), in student id order."""
    records = []
    for student_id in course.student_ids:
        sessions = tuple(course.sessions.get(student_id, ()))
        records.append(StudentRecord(student_id=student_id, grade=course.grades.get(student_id),
                                     total_clicks=sum(len(s) for s in sessions), sessions=sessions,
                                     events=tuple(course.events[student_id])))
    return records


def filter_students(records, min_clicks=DEFAULT_MIN_CLICKS):
    """Keep students with a grade and at least ``min_clicks`` clicks.

    :return: Kept records and the number excluded per reason
      (``no_grade`` is checked before ``too_few_clicks``).
    :rtype: tuple of (list, collections.Counter)
    """
    kept, excluded = [], Counter()
    for record in records:
        if record.grade is None:
            excluded["no_grade"] += 1
        elif record.total_clicks < min_clicks:
            excluded["too_few_clicks"] += 1
        else:
            kept.append(record)
    log.info("kept %d of %d students (%s)", len(kept), len(records),
             ", ".join("{}={}".format(k, v) for k, v in sorted(excluded.items())) or "none excluded")
    return kept, excluded


def split_students(records, train_frac=DEFAULT_TRAIN_FRAC, seed=0):
    """Seeded random split into ``ceil(N * train_frac)`` training students and the rest.
    The permutation is applied to records sorted by student id, so the split only
    depends on the set of students and the seed."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1), got {}".format(train_frac))
    ordered = sorted(records, key=lambda r: r.student_id)
    order = np.random.default_rng(seed).permutation(len(ordered))
    n_train = int(math.ceil(round(len(ordered) * train_frac, 9)))
    return [ordered[i] for i in order[:n_train]], [ordered[i] for i in order[n_train:]]


def evaluate_accuracy(preds, labels):
    """Fraction of predictions equal to their label."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("{} predictions for {} labels".format(preds.size, labels.size))
    if preds.size == 0:
        raise ValueError("no predictions to score")
    return float(np.mean(preds == labels))


def training_vocab(records):
    """Raw click-type vocabulary of the training students, in student id order,
    closed by :data:`UNSEEN_CLICK_TYPE`."""
    ordered = sorted(records, key=lambda r: r.student_id)
    return build_vocab((e.raw_type for r in ordered for e in r.events), fallback=UNSEEN_CLICK_TYPE)


def split_with_vocab(records, course, feature_labels, train_frac=DEFAULT_TRAIN_FRAC, seed=0, threshold=0.0):
    """:func:`split_students`, then re-encode ``raw`` sequences (when requested)
    with the vocabulary of the training split.

    :return: ``(train, test, raw vocabulary or None)``
    """
    train, test = split_students(records, train_frac, seed)
    if "raw" not in feature_labels:
        return train, test, None
    vocab = training_vocab(train)
    train = attach_sequences(train, course, ["raw"], threshold=threshold, raw_vocab=vocab)
    test = attach_sequences(test, course, ["raw"], threshold=threshold, raw_vocab=vocab)
    log.info("raw vocabulary of the training split: %d click types", vocab.size - 1)
    return train, test, vocab


def vocab_size_for(feature_label, course, behavior_models, raw_vocab=None):
    """Token id range of a feature set; ``raw_vocab`` overrides the course-wide
    raw vocabulary."""
    if feature_label == "raw":
        return (course.raw_vocab if raw_vocab is None else raw_vocab).size
    if feature_label == "category":
        return course.category_map.n_categories
    return _behavior_model(feature_label, behavior_models).K


def _behavior_model(feature_label, behavior_models):
    kind = STATE_MODELS[feature_label]
    model = (behavior_models or {}).get(kind)
    if model is None:
        raise ValueError("{} features need a fitted {} behavior model".format(feature_label, kind))
    return model


def attach_sequences(records, course, feature_labels, behavior_models=None, threshold=0.0, raw_vocab=None):
    """Build the labelled sequence of every feature set for every record.
    Records that yield no tokens for some feature set are dropped (logged).

    :param behavior_models: ``{"mmm": MmmParams, "hmm": HmmParams}``; only the ones
      the requested state feature sets need.
    :param raw_vocab: Vocabulary of ``raw`` features (default: the course-wide one).
    """
    category_vocab = Vocabulary(course.category_map.categories)
    out = []
    for record in records:
        label = make_label(record.grade, threshold)
        sequences = dict(record.sequences)
        for feature_label in feature_labels:
            family = FEATURE_FAMILIES[feature_label]
            model = _behavior_model(feature_label, behavior_models) if family == "state" else None
            vocab = (course.raw_vocab if raw_vocab is None else raw_vocab) if family == "raw" else category_vocab
            sample = build_sequence(record.student_id, record.events, record.sessions, family, vocab, label,
                                    course.course_start_ts, category_map=course.category_map, state_model=model)
            if sample is None:
                break
            sequences[feature_label] = sample
        else:
            out.append(replace(record, sequences=sequences))
    if len(out) < len(records):
        log.warning("dropped %d student(s) without tokens", len(records) - len(out))
    return out


@dataclass(frozen=True)
class ExperimentCell:
    """One row of the results table."""
    course: str
    dimension: str
    value: object
    feature_set: str
    model: str
    split: str
    seed: int
    accuracy: float
    n: int

    def __post_init__(self):
        if self.split not in supported_splits:
            raise ValueError("unknown split: {}".format(self.split))
        if self.n <= 0:
            raise ValueError("a reported cell needs n > 0")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy outside [0, 1]: {}".format(self.accuracy))


@dataclass(frozen=True)
class GridConfig:
    models: Tuple[str, ...] = tuple(supported_models)
    feature_sets: Tuple[str, ...] = tuple(FEATURE_FAMILIES)
    dimensions: Dict = field(default_factory=lambda: OrderedDict(DEFAULT_DIMENSION_VALUES))
    train_frac: float = DEFAULT_TRAIN_FRAC
    seed: int = 0
    repeats: int = 1
    label_threshold: float = 0.0
    emit_train: bool = True
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        for model in self.models:
            if model not in supported_models:
                raise ValueError("unknown model kind: {}".format(model))
        for label in self.feature_sets:
            if label not in FEATURE_FAMILIES:
                raise ValueError("unknown feature set: {}".format(label))
        for dimension in self.dimensions:
            if dimension not in supported_dimensions:
                raise ValueError("unknown prefix dimension: {}".format(dimension))
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1, got {}".format(self.repeats))

    def prefix_specs(self, dimension):
        """Prefix specs of a dimension; ``All`` is always included (last)."""
        values = [v for v in self.dimensions[dimension] if v != ALL]
        return [PrefixSpec(dimension, v) for v in values] + [PrefixSpec(dimension, ALL)]

    def classifier_for_seed(self, seed):
        cfg = self.classifier
        return ClassifierConfig(lstm=replace(cfg.lstm, seed=seed), svm=replace(cfg.svm, seed=seed),
                                mlp=replace(cfg.mlp, seed=seed))


@dataclass
class GridResult:
    cells: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)
    comparisons: list = field(default_factory=list)


def valid_combination(dimension, feature_label):
    return PrefixSpec(dimension).is_valid_for(FEATURE_FAMILIES[feature_label])


def prefix_samples(records, feature_label, spec):
    """Truncated samples of ``records``; returns the samples and how many were empty."""
    samples, empty = [], 0
    for record in records:
        truncated = truncate_prefix(record.sequences[feature_label], spec)
        if truncated is None:
            empty += 1
        else:
            samples.append(truncated)
    return samples, empty


def run_cell(model_kind, train_samples, eval_samples, vocab_size, classifier_cfg):
    """Train one classifier and score it.

    :return: ``(classifier, accuracy on eval_samples)``
    """
    classifier = train_classifier(model_kind, train_samples, vocab_size, classifier_cfg)
    preds = predict_labels(classifier, eval_samples)
    return classifier, evaluate_accuracy(preds, [s.label for s in eval_samples])


def _has_both_labels(samples):
    return {s.label for s in samples} == {0, 1}


def run_experiment_grid(course, records, cfg, behavior_models=None):
    """Run every valid (dimension, value, feature set, model) combination for
    every repeat: truncate, train on the training split, score on the training
    and test splits.

    :param records: Filtered records (see :func:`filter_students`).
    :param behavior_models: Behavior models fitted on this course.
    :rtype: :class:`GridResult`
    """
    records = attach_sequences(records, course, cfg.feature_sets, behavior_models, cfg.label_threshold)
    result = GridResult()
    for dimension in cfg.dimensions:
        for label in cfg.feature_sets:
            if not valid_combination(dimension, label):
                log.info("skipping %s x %s: prefix dimension does not apply", dimension, label)
    for repeat in range(cfg.repeats):
        seed = cfg.seed + repeat
        train, test, raw_vocab = split_with_vocab(records, course, cfg.feature_sets, cfg.train_frac, seed,
                                                  cfg.label_threshold)
        classifier_cfg = cfg.classifier_for_seed(seed)
        log.info("repeat %d (seed %d): %d training / %d test students", repeat + 1, seed, len(train), len(test))
        for dimension in cfg.dimensions:
            for spec in cfg.prefix_specs(dimension):
                for label in cfg.feature_sets:
                    if not valid_combination(dimension, label):
                        continue
                    result.cells.extend(_grid_cells(course, train, test, spec, label, cfg, classifier_cfg, seed,
                                                    behavior_models, raw_vocab, result))
    if cfg.repeats >= 2:
        result.comparisons = significance_comparisons(result.cells)
    return result


def _grid_cells(course, train, test, spec, label, cfg, classifier_cfg, seed, behavior_models, raw_vocab, result):
    train_samples, train_empty = prefix_samples(train, label, spec)
    test_samples, test_empty = prefix_samples(test, label, spec)
    for split, empty in (("train", train_empty), ("test", test_empty)):
        if empty:
            result.exclusions.append(("empty_prefix", spec.dimension, spec.value, label, split, empty))
    if not _has_both_labels(train_samples) or not test_samples:
        log.warning("skipping %s=%s %s (seed %d): training split needs both labels and test split students",
                    spec.dimension, spec.value, label, seed)
        return []
    vocab_size = vocab_size_for(label, course, behavior_models, raw_vocab)
    cells = []
    for model in cfg.models:
        classifier, test_acc = run_cell(model, train_samples, test_samples, vocab_size, classifier_cfg)
        if cfg.emit_train:
            train_acc = evaluate_accuracy(predict_labels(classifier, train_samples), [s.label for s in train_samples])
            cells.append(ExperimentCell(course.name, spec.dimension, spec.value, label, model, "train", seed,
                                        train_acc, len(train_samples)))
        cells.append(ExperimentCell(course.name, spec.dimension, spec.value, label, model, "test", seed, test_acc,
                                    len(test_samples)))
        log.info("%s=%s %s %s (seed %d): test accuracy %.4f on %d", spec.dimension, spec.value, label, model, seed,
                 test_acc, len(test_samples))
    return cells


def transfer_evaluate(classifier, behavior_model, course_b, records_b, spec=None, threshold=0.0, seed=0,
                      decoded=False):
    """Score a classifier trained on another course's state features on all
    of ``records_b``. Course B's sessions are decoded with the *other* course's
    behavior model.

    :param classifier: Trained on ``mmm_state`` or ``hmm_state`` features.
    :param behavior_model: The behavior model those features were decoded with.
    :param spec: Prefix applied to course B's sequences (default: all of it).
    :param decoded: ``records_b`` already carry sequences decoded with ``behavior_model``.
    :return: The ``transfer`` cell, or ``None`` when no student has a non-empty prefix.
    :raises ValueError: when course B's category count differs from the model's.
    """
    if behavior_model.C != course_b.category_map.n_categories:
        raise ValueError("category dimension mismatch: behavior model has C={}, course {} has {} categories".format(
            behavior_model.C, course_b.name, course_b.category_map.n_categories))
    if classifier.feature_set != "state":
        raise ValueError("transfer needs a classifier trained on state features, got {}".format(classifier.feature_set))
    label = "{}_state".format(behavior_model.kind)
    spec = spec or PrefixSpec("course_days", ALL)
    if not decoded:
        records_b = attach_sequences(records_b, course_b, [label], {behavior_model.kind: behavior_model}, threshold)
    samples, empty = prefix_samples(records_b, label, spec)
    if empty:
        log.warning("%d student(s) of %s have an empty %s=%s prefix", empty, course_b.name, spec.dimension, spec.value)
    if not samples:
        return None
    accuracy = evaluate_accuracy(predict_labels(classifier, samples), [s.label for s in samples])
    log.info("transfer to %s, %s=%s %s %s: accuracy %.4f on %d", course_b.name, spec.dimension, spec.value, label,
             classifier.model_kind, accuracy, len(samples))
    return ExperimentCell(course_b.name, spec.dimension, spec.value, label, classifier.model_kind, "transfer", seed,
                          accuracy, len(samples))


def run_transfer_grid(course_a, records_a, course_b, records_b, behavior_models, cfg):
    """Train on course A's training split (state features only) and score on
    A's test split and on all of course B."""
    labels = [label for label in cfg.feature_sets if label in STATE_MODELS]
    for label in cfg.feature_sets:
        if label not in STATE_MODELS:
            log.info("skipping %s features: transfer uses behavior-state features", label)
    records_a = attach_sequences(records_a, course_a, labels, behavior_models, cfg.label_threshold)
    records_b = attach_sequences(records_b, course_b, labels, behavior_models, cfg.label_threshold)
    result = GridResult()
    for repeat in range(cfg.repeats):
        seed = cfg.seed + repeat
        train, test = split_students(records_a, cfg.train_frac, seed)
        classifier_cfg = cfg.classifier_for_seed(seed)
        for dimension in cfg.dimensions:
            for spec in cfg.prefix_specs(dimension):
                for label in labels:
                    if not valid_combination(dimension, label):
                        continue
                    train_samples, _ = prefix_samples(train, label, spec)
                    test_samples, _ = prefix_samples(test, label, spec)
                    if not _has_both_labels(train_samples):
                        log.warning("skipping transfer %s=%s %s (seed %d): training split needs both labels",
                                    spec.dimension, spec.value, label, seed)
                        continue
                    model = behavior_models[STATE_MODELS[label]]
                    for kind in cfg.models:
                        classifier = train_classifier(kind, train_samples, model.K, classifier_cfg)
                        if test_samples:
                            test_acc = evaluate_accuracy(predict_labels(classifier, test_samples),
                                                         [s.label for s in test_samples])
                            result.cells.append(ExperimentCell(course_a.name, spec.dimension, spec.value, label, kind,
                                                               "test", seed, test_acc, len(test_samples)))
                        cell = transfer_evaluate(classifier, model, course_b, records_b, spec, cfg.label_threshold,
                                                 seed, decoded=True)
                        if cell is not None:
                            result.cells.append(cell)
    if cfg.repeats >= 2:
        result.comparisons = significance_comparisons(result.cells, split="transfer")
    return result


def significance_comparisons(cells, split="test"):
    """Per (dimension, value, feature set) group of ``split`` cells, compare
    every model's per-repeat accuracies with the weakest model of the group."""
    groups = OrderedDict()
    for cell in cells:
        if cell.split != split:
            continue
        key = (cell.dimension, cell.value, cell.feature_set)
        groups.setdefault(key, OrderedDict()).setdefault(cell.model, []).append(cell.accuracy)
    comparisons = []
    for (dimension, value, feature_set), by_model in groups.items():
        usable = OrderedDict((m, acc) for m, acc in by_model.items() if len(acc) >= 2)
        prefix = "{}={}/{}/".format(dimension, value, feature_set)
        for name, weakest, outcome in compare_to_weakest(usable):
            comparisons.append((prefix + name, prefix + weakest, outcome))
    return comparisons


def results_frame(cells):
    """Results table ``course,dimension,value,feature_set,model,split,seed,accuracy,n``."""
    rows = [(c.course, c.dimension, c.value, c.feature_set, c.model, c.split, c.seed, c.accuracy, c.n) for c in cells]
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def read_results(path):
    frame = pd.read_csv(path, dtype={"course": str, "value": str, "feature_set": str, "model": str, "split": str})
    artifacts.require_columns(frame, RESULT_COLUMNS, path)
    return frame


def exclusions_frame(filter_counts, cell_exclusions=()):
    """Exclusions table: per-reason student counts of the filtering stage
    followed by the empty-prefix counts of individual cells."""
    rows = [(reason, "", "", "", "", count) for reason, count in sorted(filter_counts.items())]
    rows.extend(cell_exclusions)
    return pd.DataFrame(rows, columns=EXCLUSION_COLUMNS)
