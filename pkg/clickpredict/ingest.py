"""Clickstream ingestion: log parsing, click categorisation, sessionisation
and token vocabularies.

A clickstream log holds one row per click: ``student_id,timestamp,click_type``
(CSV with header, or JSONL with the same three keys). Timestamps are integer
epoch seconds in UTC.
"""
import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from clickpredict.artifacts import FormatError, require_columns

log = logging.getLogger(__name__)

SENTINEL = -1
"""Category id of an event that has not been through :func:`apply_categories`."""

DEFAULT_GAP_SECONDS = 3600
"""Inactivity (in seconds) that must be *exceeded* to start a new session."""

SUPER_GROUPS = ("lecture", "quiz", "forum", "class", "wiki")
"""The five coarse click groups used when summarising behaviors."""

FALLBACK_KEY = "__fallback__"
"""Reserved ``raw_prefix`` of the category map line naming the fallback category."""

supported_log_formats = ["csv", "jsonl"]
"""Accepted clickstream encodings."""

LOG_COLUMNS = ["student_id", "timestamp", "click_type"]
GRADE_COLUMNS = ["student_id", "grade"]
CATEGORY_COLUMNS = ["raw_prefix", "category", "super_group"]

REPLACEMENT_CHAR = "\ufffd"
"""Stands in for undecodable bytes of a CSV log; rows containing it are malformed."""

DEFAULT_CATEGORY_MAP = os.path.join(os.path.dirname(__file__), "data", "default_categories.csv")
"""Illustrative 46-category map shipped with the package."""

_INTEGER = re.compile(r"\d+")


@dataclass(frozen=True)
class ClickEvent:
    """One timestamped, typed action by one student."""
    student_id: str
    timestamp: int
    raw_type: str
    category_id: int = SENTINEL


@dataclass
class ParseResult:
    """Output of :func:`parse_log`: events grouped by student (students in
    ascending id order, events in ascending time order) plus the number of
    rows that were skipped as malformed."""
    events: Dict[str, List[ClickEvent]] = field(default_factory=dict)
    malformed: int = 0

    @property
    def n_events(self):
        return sum(len(v) for v in self.events.values())


@dataclass(frozen=True)
class Session:
    """A maximal run of one student's clicks with no inter-click gap above
    the session gap."""
    student_id: str
    start_ts: int
    end_ts: int
    clicks: Tuple[int, ...]
    counts: np.ndarray

    def __len__(self):
        return len(self.clicks)


class CategoryMap(object):
    """Maps raw click types to click categories by longest-prefix match.

    :param entries: ``raw_prefix -> category name``.
    :type entries: dict
    :param categories: Ordered category names; a category id is an index into this list.
    :type categories: list of str
    :param fallback: Category given to raw types no prefix matches.
    :type fallback: str
    :param super_groups: ``category name -> super-group`` (one of :attr:`SUPER_GROUPS`).
    :type super_groups: dict
    """

    def __init__(self, entries, categories, fallback, super_groups):
        self.entries = dict(entries)
        self.categories = list(categories)
        self.fallback = fallback
        self.super_groups = dict(super_groups)
        self.validate()
        self._index = {name: i for i, name in enumerate(self.categories)}
        # longest prefixes first so the first hit is the longest match
        self._prefixes = sorted(self.entries, key=lambda p: (-len(p), p))
        self._cache = {}

    def validate(self):
        """Raise :class:`ValueError` unless the map is internally consistent."""
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("category list has duplicates")
        known = set(self.categories)
        for prefix, category in self.entries.items():
            if not prefix:
                raise ValueError("empty raw prefix")
            if category not in known:
                raise ValueError("entry '{}' targets unknown category '{}'".format(prefix, category))
        if self.fallback not in known:
            raise ValueError("fallback category '{}' is not in the category list".format(self.fallback))
        for category in self.categories:
            group = self.super_groups.get(category)
            if group not in SUPER_GROUPS:
                raise ValueError("category '{}' has no valid super-group (got {!r})".format(category, group))

    @property
    def n_categories(self):
        return len(self.categories)

    def lookup(self, raw_type):
        """Return the category id of a raw click type (a pure function of ``raw_type``)."""
        cid = self._cache.get(raw_type)
        if cid is None:
            name = self.fallback
            for prefix in self._prefixes:
                if raw_type.startswith(prefix):
                    name = self.entries[prefix]
                    break
            cid = self._index[name]
            self._cache[raw_type] = cid
        return cid

    def category_id(self, name):
        return self._index[name]

    def group_of(self, category_id):
        return self.super_groups[self.categories[category_id]]

    def to_frame(self):
        """Render the map in its CSV file layout. Rows are grouped by category
        in category order, so reloading the file reproduces the category ids."""
        rows = []
        for category in self.categories:
            group = self.super_groups[category]
            if category == self.fallback:
                rows.append((FALLBACK_KEY, category, group))
            rows.extend((p, category, group) for p, c in self.entries.items() if c == category)
        return pd.DataFrame(rows, columns=CATEGORY_COLUMNS)


def load_category_map(path=None):
    """Load a category map file (``raw_prefix,category,super_group`` plus one
    ``__fallback__,<category>,<super_group>`` line). Categories are numbered
    in order of first appearance in the file.

    :param path: Map file; ``None`` loads :attr:`DEFAULT_CATEGORY_MAP`.
    :rtype: :class:`CategoryMap`
    """
    path = path or DEFAULT_CATEGORY_MAP
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    require_columns(frame, CATEGORY_COLUMNS, path)
    entries, categories, super_groups = {}, [], {}
    fallback = None
    for prefix, category, group in frame[CATEGORY_COLUMNS].itertuples(index=False):
        prefix, category, group = prefix.strip(), category.strip(), group.strip()
        if category not in super_groups:
            categories.append(category)
            super_groups[category] = group
        elif super_groups[category] != group:
            raise ValueError("category '{}' assigned to two super-groups ({}, {})".format(
                category, super_groups[category], group))
        if prefix == FALLBACK_KEY:
            if fallback is not None:
                raise ValueError("{}: more than one fallback line".format(path))
            fallback = category
        else:
            entries[prefix] = category
    if fallback is None:
        raise FormatError("{}: no {} line".format(path, FALLBACK_KEY))
    cmap = CategoryMap(entries, categories, fallback, super_groups)
    log.info("loaded %d categories (%d prefixes) from %s", cmap.n_categories, len(entries), path)
    return cmap


def _valid_row(student_id, timestamp, raw_type):
    return bool(student_id) and bool(raw_type) and bool(_INTEGER.fullmatch(timestamp))


def _read_csv_rows(source):
    bad_lines = []

    def on_bad_line(line):
        bad_lines.append(line)
        return None

    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, engine="python",
                            on_bad_lines=on_bad_line, encoding="utf-8", encoding_errors="replace")
    except pd.errors.EmptyDataError:
        return [], 0
    require_columns(frame, LOG_COLUMNS, "clickstream")
    frame = frame.fillna("")
    rows, undecodable = [], 0
    for s, t, c in frame[LOG_COLUMNS].itertuples(index=False):
        if REPLACEMENT_CHAR in s or REPLACEMENT_CHAR in t or REPLACEMENT_CHAR in c:
            undecodable += 1
            continue
        rows.append((s.strip(), t.strip(), c.strip()))
    return rows, len(bad_lines) + undecodable


def _read_jsonl_rows(source):
    rows, malformed = [], 0
    for raw_line in source:
        try:
            line = raw_line.decode("utf-8") if isinstance(raw_line, bytes) else raw_line
        except UnicodeDecodeError:
            malformed += 1
            continue
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            rows.append(tuple(str(record[k]).strip() for k in LOG_COLUMNS))
        except (ValueError, KeyError, TypeError):
            malformed += 1
    return rows, malformed


def parse_log(source, format="csv"):
    """Parse a clickstream log into per-student, time-ordered event lists.

    Malformed rows (missing fields, empty click type, non-integer or negative
    timestamp, invalid UTF-8, undecodable JSON) are skipped and counted. Events of one
    student are sorted by timestamp; ties keep their input order.

    :param source: A binary stream (or path) holding the log.
    :param format: One of :attr:`supported_log_formats`.
    :type format: str
    :rtype: :class:`ParseResult`
    """
    if format not in supported_log_formats:
        raise ValueError("Unrecognized log format: '{}'. Must be one of {}".format(format, supported_log_formats))
    if isinstance(source, (str, os.PathLike)):
        with open(source, mode="rb") as f:
            return parse_log(f, format)

    if format == "csv":
        rows, malformed = _read_csv_rows(source)
    else:
        rows, malformed = _read_jsonl_rows(source)

    grouped = {}
    for student_id, timestamp, raw_type in rows:
        if not _valid_row(student_id, timestamp, raw_type):
            malformed += 1
            continue
        grouped.setdefault(student_id, []).append(ClickEvent(student_id, int(timestamp), raw_type))

    result = ParseResult(malformed=malformed)
    for student_id in sorted(grouped):
        # sorted() is stable: equal timestamps keep input order
        result.events[student_id] = sorted(grouped[student_id], key=lambda e: e.timestamp)
    if malformed:
        log.warning("skipped %d malformed clickstream row(s)", malformed)
    log.info("parsed %d events for %d students", result.n_events, len(result.events))
    return result


def parse_grades(source):
    """Parse a grades CSV (``student_id,grade``). Rows whose grade is not a
    number in [0, 100] are skipped and counted.

    :return: ``(grades by student id, number of skipped rows)``
    :rtype: tuple of (dict, int)
    """
    frame = pd.read_csv(source, dtype=str, keep_default_na=False)
    require_columns(frame, GRADE_COLUMNS, "grades")
    grades, malformed = {}, 0
    values = pd.to_numeric(frame["grade"], errors="coerce")
    for student_id, grade in zip(frame["student_id"].str.strip(), values):
        if not student_id or not np.isfinite(grade) or not 0.0 <= grade <= 100.0:
            malformed += 1
            continue
        grades[student_id] = float(grade)
    if malformed:
        log.warning("skipped %d malformed grade row(s)", malformed)
    return grades, malformed


def apply_categories(events, category_map):
    """Return ``events`` with ``category_id`` set from the category map.
    Unmapped raw types get the fallback category."""
    return [replace(e, category_id=category_map.lookup(e.raw_type)) for e in events]


def segment_sessions(events, n_categories, gap_seconds=DEFAULT_GAP_SECONDS):
    """Split one student's time-ordered, categorised events into sessions.
    A new session starts between events ``i`` and ``i+1`` iff
    ``ts(i+1) - ts(i) > gap_seconds``.

    :param events: One student's events, sorted by timestamp, categories applied.
    :param n_categories: Length of each session's count vector.
    :param gap_seconds: Session gap in seconds (> 0).
    :rtype: list of :class:`Session`
    """
    if gap_seconds <= 0:
        raise ValueError("gap_seconds must be > 0, got {}".format(gap_seconds))
    sessions = []
    if not events:
        return sessions

    def close(run):
        clicks = tuple(e.category_id for e in run)
        if any(c < 0 or c >= n_categories for c in clicks):
            raise ValueError("event without a valid category id in session of {}".format(run[0].student_id))
        counts = np.bincount(clicks, minlength=n_categories).astype(np.int64)
        sessions.append(Session(run[0].student_id, run[0].timestamp, run[-1].timestamp, clicks, counts))

    run = [events[0]]
    for prev, event in zip(events, events[1:]):
        if event.timestamp < prev.timestamp:
            raise ValueError("events of {} are not sorted by time".format(event.student_id))
        if event.timestamp - prev.timestamp > gap_seconds:
            close(run)
            run = []
        run.append(event)
    close(run)
    return sessions


class Vocabulary(object):
    """A bijection between tokens and contiguous integer ids ``0..size-1``.

    :param fallback: Optional token that :meth:`encode` substitutes for tokens
      outside the vocabulary; it is added after the given tokens.
    """

    def __init__(self, tokens=(), fallback=None):
        self._ids = {}
        self._tokens = []
        for token in tokens:
            self.add(token)
        self.fallback = fallback
        if fallback is not None:
            self.add(fallback)

    def add(self, token):
        """Return the id of ``token``, assigning the next id on first sight."""
        tid = self._ids.get(token)
        if tid is None:
            tid = len(self._tokens)
            self._ids[token] = tid
            self._tokens.append(token)
        return tid

    @property
    def size(self):
        return len(self._tokens)

    def __len__(self):
        return self.size

    def __contains__(self, token):
        return token in self._ids

    def id_of(self, token):
        return self._ids[token]

    def encode(self, token):
        """Id of ``token``, or of the fallback token for one never seen.

        :raises KeyError: for an unseen token when there is no fallback.
        """
        tid = self._ids.get(token)
        if tid is None:
            if self.fallback is None:
                raise KeyError(token)
            tid = self._ids[self.fallback]
        return tid

    def token_of(self, tid):
        return self._tokens[tid]

    def tokens(self):
        return list(self._tokens)


def build_vocab(tokens, fallback=None):
    """Build a :class:`Vocabulary` assigning ids by first occurrence, followed
    by the ``fallback`` token when one is given."""
    return Vocabulary(tokens, fallback)


def group_events(events):
    """Group an iterable of events by student (ascending student id)."""
    grouped = {}
    for e in events:
        grouped.setdefault(e.student_id, []).append(e)
    return {sid: grouped[sid] for sid in sorted(grouped)}


def sessions_to_frame(sessions_by_student):
    """Render sessions as a table ``student_id,start_ts,end_ts,clicks``
    (clicks are space-separated category ids)."""
    rows = [(s.student_id, s.start_ts, s.end_ts, " ".join(str(c) for c in s.clicks))
            for sessions in sessions_by_student.values() for s in sessions]
    return pd.DataFrame(rows, columns=["student_id", "start_ts", "end_ts", "clicks"])



def events_to_frame(events_by_student):
    rows = [(e.student_id, e.timestamp, e.raw_type, e.category_id)
            for events in events_by_student.values() for e in events]
    return pd.DataFrame(rows, columns=LOG_COLUMNS + ["category_id"])


def events_from_frame(frame):
    require_columns(frame, LOG_COLUMNS + ["category_id"], "events")
    events = [ClickEvent(str(s), int(t), str(c), int(k))
              for s, t, c, k in frame[LOG_COLUMNS + ["category_id"]].itertuples(index=False)]
    return group_events(events)

