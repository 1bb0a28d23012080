"""Per-student feature sequences, prefix truncation and indicative n-grams.

Three feature families are built per student:

* ``raw``: one token per click, from the raw click-type vocabulary;
* ``category``: one token per click, from the click-category vocabulary;
* ``state``: one token per session, the session's decoded behavior state,
  timestamped by the session start.
"""
import bisect
import logging
from collections import Counter
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
import pandas as pd

from clickpredict.behavior import decode_states

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400

supported_feature_sets = ["raw", "category", "state"]
"""Feature families of a :class:`SequenceSample`."""

supported_dimensions = ["course_days", "student_days", "n_clicks", "n_states"]
"""Prefix truncation axes."""

ALL = "All"
"""Prefix value meaning "the whole sequence"."""


@dataclass(frozen=True)
class SequenceSample:
    """One student's token sequence under one feature family."""
    student_id: str
    feature_set: str
    tokens: Tuple[int, ...]
    token_ts: Tuple[int, ...]
    label: int
    course_start_ts: int
    first_click_ts: int

    def __post_init__(self):
        if self.feature_set not in supported_feature_sets:
            raise ValueError("unknown feature set: {}".format(self.feature_set))
        if not self.tokens:
            raise ValueError("empty token sequence for {}".format(self.student_id))
        if len(self.tokens) != len(self.token_ts):
            raise ValueError("tokens and token_ts differ in length")
        if any(b < a for a, b in zip(self.token_ts, self.token_ts[1:])):
            raise ValueError("token_ts must be non-decreasing")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1, got {}".format(self.label))

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class PrefixSpec:
    """How much of a sequence a predictor sees: a truncation ``dimension``
    and a positive ``value`` (or :attr:`ALL`).

    ``n_states`` values are prefix lengths of the decoded state sequence,
    not a number of model states."""
    dimension: str
    value: object = ALL

    def __post_init__(self):
        if self.dimension not in supported_dimensions:
            raise ValueError("unknown prefix dimension: {}".format(self.dimension))
        if self.value != ALL and (not isinstance(self.value, (int, np.integer)) or self.value < 1):
            raise ValueError("prefix value must be a positive integer or {!r}, got {!r}".format(ALL, self.value))

    def is_valid_for(self, feature_set):
        if self.dimension == "n_states":
            return feature_set == "state"
        if self.dimension == "n_clicks":
            return feature_set in ("raw", "category")
        return True

    @classmethod
    def parse(cls, dimension, text):
        text = str(text).strip()
        return cls(dimension, ALL if text.lower() == ALL.lower() else int(text))


def build_sequence(student_id, events, sessions, feature_set, vocab, label, course_start_ts,
                   category_map=None, state_model=None):
    """Build one student's :class:`SequenceSample`.

    :param events: The student's categorised events in time order (raw and category features).
    :param sessions: The student's sessions (state features).
    :param feature_set: One of :attr:`supported_feature_sets`.
    :param vocab: Raw click-type vocabulary (``raw``; click types it lacks map to its fallback)
      or category-name vocabulary (``category``); unused for ``state``.
    :param category_map: Needed for ``category`` features.
    :param state_model: Fitted :class:`~clickpredict.behavior.MmmParams` or
      :class:`~clickpredict.behavior.HmmParams`; needed for ``state`` features.
    :return: The sample, or ``None`` (logged) when the student has nothing to encode.
    """
    if feature_set == "raw":
        tokens = [vocab.encode(e.raw_type) for e in events]
        stamps = [e.timestamp for e in events]
    elif feature_set == "category":
        if category_map is None:
            raise ValueError("category features need a category map")
        tokens = [vocab.id_of(category_map.categories[e.category_id]) for e in events]
        stamps = [e.timestamp for e in events]
    elif feature_set == "state":
        if state_model is None:
            raise ValueError("state features need a fitted behavior model")
        tokens = decode_states(sessions, state_model)
        stamps = [s.start_ts for s in sessions]
    else:
        raise ValueError("unknown feature set: {}".format(feature_set))
    if not tokens:
        log.warning("student %s has no %s tokens: skipped", student_id, feature_set)
        return None
    return SequenceSample(student_id=student_id, feature_set=feature_set, tokens=tuple(tokens),
                          token_ts=tuple(stamps), label=label, course_start_ts=course_start_ts,
                          first_click_ts=stamps[0])


def truncate_prefix(sample, spec):
    """Cut a sample down to the prefix selected by ``spec``.

    :return: The truncated sample, or ``None`` when the prefix is empty.
    :raises ValueError: if ``spec`` does not apply to the sample's feature set.
    """
    if not spec.is_valid_for(sample.feature_set):
        raise ValueError("prefix dimension {} does not apply to {} features".format(
            spec.dimension, sample.feature_set))
    if spec.value == ALL:
        return sample
    if spec.dimension == "course_days":
        cutoff = sample.course_start_ts + SECONDS_PER_DAY * spec.value
        n = bisect.bisect_right(sample.token_ts, cutoff)
    elif spec.dimension == "student_days":
        cutoff = sample.first_click_ts + SECONDS_PER_DAY * spec.value
        n = bisect.bisect_right(sample.token_ts, cutoff)
    else:
        n = min(spec.value, len(sample.tokens))
    if n == 0:
        return None
    if n == len(sample.tokens):
        return sample
    return replace(sample, tokens=sample.tokens[:n], token_ts=sample.token_ts[:n])


def count_vector(sample, vocab_size):
    """Multiplicity of every token id ``0..vocab_size-1`` in the sample."""
    tokens = np.asarray(sample.tokens, dtype=np.int64)
    assert tokens.max() < vocab_size, "token id outside the vocabulary"
    return np.bincount(tokens, minlength=vocab_size)


def length_feature(sample):
    """The sample's length as a 1-vector."""
    return np.array([len(sample.tokens)], dtype=np.int64)


def ngram_counts(samples, n):
    """Total count of every length-``n`` window over all ``samples``."""
    if n < 1:
        raise ValueError("n must be >= 1, got {}".format(n))
    counts = Counter()
    for sample in samples:
        tokens = sample.tokens
        counts.update(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return counts


@dataclass(frozen=True)
class NgramRow:
    ngram: Tuple[int, ...]
    frequency: int
    rate_per_student: float
    other_rate_per_student: float

    @property
    def rate_difference(self):
        return self.rate_per_student - self.other_rate_per_student


@dataclass(frozen=True)
class NgramReport:
    """Top n-grams per class (label ``1`` = high graders, ``0`` = low graders)."""
    n: int
    by_class: dict

    def to_frame(self, render=None):
        """Table ``class,rank,ngram,frequency,rate_per_student,rate_difference``.

        :param render: Maps a token id to its display name (default: the id).
        """
        render = render or str
        rows = []
        for label in sorted(self.by_class, reverse=True):
            for rank, row in enumerate(self.by_class[label], start=1):
                rows.append((label, rank, " ".join(render(t) for t in row.ngram), row.frequency,
                             row.rate_per_student, row.rate_difference))
        return pd.DataFrame(rows, columns=["class", "rank", "ngram", "frequency", "rate_per_student",
                                           "rate_difference"])


def ngram_indicative(samples, labels, n=1, top_k=5):
    """Rank n-grams by total frequency within each class and keep the top ``top_k``.
    Every listed n-gram also carries its per-student rate in the other class.
    Rates divide by the number of distinct students of a class, so several
    samples of one student (e.g. its sessions) count once in the denominator.

    :param samples: Samples sharing one feature set.
    :param labels: Class label of each sample.
    :rtype: :class:`NgramReport`
    """
    if len(samples) != len(labels):
        raise ValueError("samples and labels differ in length")
    if len({s.feature_set for s in samples}) > 1:
        raise ValueError("samples mix feature sets")
    members = {0: [], 1: []}
    for sample, label in zip(samples, labels):
        members[int(label)].append(sample)
    counts = {label: ngram_counts(group, n) for label, group in members.items()}
    students = {label: len({s.student_id for s in group}) for label, group in members.items()}

    def rate(label, ngram):
        size = students[label]
        return counts[label][ngram] / size if size else 0.0

    by_class = {}
    for label in (1, 0):
        ranked = sorted(counts[label].items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        by_class[label] = [NgramRow(ngram, freq, rate(label, ngram), rate(1 - label, ngram))
                           for ngram, freq in ranked]
    return NgramReport(n=n, by_class=by_class)


def state_unigram_indicative(students, labels, top_k=5):
    """Per-state unigram rankings: for every decoded session state, the top
    click categories per class over the clicks of sessions in that state.

    :param students: ``(sessions, state path)`` per student.
    :param labels: Class label per student.
    :return: ``state -> NgramReport``.
    """
    per_state = {}
    for (sessions, path), label in zip(students, labels):
        for session, state in zip(sessions, path):
            per_state.setdefault(state, ([], []))
            bucket = per_state[state]
            bucket[0].append(SequenceSample(
                student_id=session.student_id, feature_set="category", tokens=session.clicks,
                token_ts=(session.start_ts,) * len(session.clicks), label=int(label),
                course_start_ts=session.start_ts, first_click_ts=session.start_ts))
            bucket[1].append(int(label))
    return {state: ngram_indicative(per_state[state][0], per_state[state][1], n=1, top_k=top_k)
            for state in sorted(per_state)}


def samples_to_frame(samples):
    """Feature dump table ``student_id,label,length,tokens``."""
    rows = [(s.student_id, s.label, len(s.tokens), " ".join(str(t) for t in s.tokens)) for s in samples]
    return pd.DataFrame(rows, columns=["student_id", "label", "length", "tokens"])
