"""Seeded synthetic courses with known behavior dynamics.

Each student belongs to an archetype with its own session-state dynamics
(initial distribution ``pi``, transitions ``A``, per-state click-category
distributions ``B``), grade distribution, session count and timing. A course
is written in the ingest formats (clickstream and grades CSV plus the
category map used) together with a ground-truth sidecar holding every
student's archetype and true state path.

Two generators are provided:

* :func:`generate_course`: archetype-driven students; the default spec has a
  high-grader and a low-grader archetype whose behavior diverges as the
  course goes on.
* :func:`generate_order_only_pair`: matched student pairs with identical
  sessions in opposite order, so count features carry no label information.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from clickpredict import artifacts
from clickpredict.ingest import DEFAULT_GAP_SECONDS, LOG_COLUMNS, SUPER_GROUPS, CategoryMap, load_category_map

log = logging.getLogger(__name__)

DEFAULT_COURSE_START = 1388534400
"""2014-01-01T00:00:00Z."""

SECONDS_PER_DAY = 86400
STOCHASTIC_TOLERANCE = 1e-9
ORDER_ONLY_ITEMS = 20

clicks_file = "clicks.csv"
grades_file = "grades.csv"
categories_file = "categories.csv"
truth_file = "truth.json"


@dataclass(frozen=True)
class Archetype:
    """A kind of student.

    Session counts are lognormal (``sessions_median``, ``sessions_sigma``, at
    least one); clicks per session are ``1 + Poisson(clicks_mean - 1)``.
    Within-session gaps are uniform integers in ``[within_gap_min,
    within_gap_max]`` seconds; gaps between sessions are
    ``between_gap_min + Exponential(between_gap_mean)`` seconds. Grades are
    ``0`` with probability ``grade_zero_prob`` and otherwise
    ``100 * Beta(grade_alpha, grade_beta)`` (at least 0.01).
    """
    name: str
    share: float
    pi: Tuple[float, ...]
    A: Tuple[Tuple[float, ...], ...]
    B: Tuple[Tuple[float, ...], ...]
    grade_zero_prob: float = 0.0
    grade_alpha: float = 4.0
    grade_beta: float = 2.0
    sessions_median: float = 13.0
    sessions_sigma: float = 1.068
    clicks_mean: float = 10.0
    within_gap_min: int = 1
    within_gap_max: int = 600
    between_gap_min: int = DEFAULT_GAP_SECONDS + 1
    between_gap_mean: float = 1.5 * SECONDS_PER_DAY

    @property
    def K(self):
        return len(self.pi)

    @property
    def C(self):
        return len(self.B[0])

    def validate(self):
        pi, A, B = np.asarray(self.pi), np.asarray(self.A), np.asarray(self.B)
        K = pi.size
        if A.shape != (K, K) or B.ndim != 2 or B.shape[0] != K:
            raise ValueError("archetype {}: inconsistent shapes pi {}, A {}, B {}".format(
                self.name, pi.shape, A.shape, B.shape))
        for label, matrix in (("pi", pi[None, :]), ("A", A), ("B", B)):
            if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > STOCHASTIC_TOLERANCE):
                raise ValueError("archetype {}: {} rows must be distributions".format(self.name, label))
        if self.clicks_mean < 1:
            raise ValueError("archetype {}: clicks_mean must be >= 1 (no empty sessions)".format(self.name))
        if not 0 < self.within_gap_min <= self.within_gap_max:
            raise ValueError("archetype {}: need 0 < within_gap_min <= within_gap_max".format(self.name))
        if self.between_gap_min <= 0 or self.between_gap_mean < 0:
            raise ValueError("archetype {}: between-session gaps must be positive".format(self.name))
        if not 0.0 <= self.grade_zero_prob <= 1.0:
            raise ValueError("archetype {}: grade_zero_prob outside [0, 1]".format(self.name))


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    n_students: int
    archetypes: Tuple[Archetype, ...]
    course_start_ts: int = DEFAULT_COURSE_START
    join_window_days: int = 7
    items_per_category: int = 20
    name: str = "synthetic"

    @property
    def K_true(self):
        return self.archetypes[0].K

    @property
    def C(self):
        return self.archetypes[0].C

    def validate(self):
        if self.n_students < 1:
            raise ValueError("n_students must be >= 1, got {}".format(self.n_students))
        if not self.archetypes:
            raise ValueError("no archetypes")
        shares = sum(a.share for a in self.archetypes)
        if abs(shares - 1.0) > STOCHASTIC_TOLERANCE:
            raise ValueError("archetype shares sum to {}, not 1".format(shares))
        for archetype in self.archetypes:
            archetype.validate()
            if archetype.K != self.K_true or archetype.C != self.C:
                raise ValueError("archetypes disagree on K or C")
        if self.items_per_category < 1:
            raise ValueError("items_per_category must be >= 1")


@dataclass(frozen=True)
class SyntheticStudent:
    """One generated student. ``sessions`` holds, per session, its clicks as
    ``(timestamp, raw click type, category id)``; ``pair`` links the two members
    of an order-only pair."""
    student_id: str
    archetype: str
    grade: float
    states: Tuple[int, ...]
    sessions: Tuple[Tuple[Tuple[int, str, int], ...], ...]
    pair: Optional[int] = None

    @property
    def session_starts(self):
        return tuple(s[0][0] for s in self.sessions)


@dataclass
class SyntheticCourse:
    """A generated course and its ground truth."""
    name: str
    seed: int
    course_start_ts: int
    category_map: CategoryMap
    students: List[SyntheticStudent] = field(default_factory=list)
    archetypes: Tuple[Archetype, ...] = ()

    def clicks_frame(self):
        rows = [(s.student_id, ts, raw) for s in self.students for session in s.sessions for ts, raw, _ in session]
        return pd.DataFrame(rows, columns=LOG_COLUMNS)

    def grades_frame(self):
        return pd.DataFrame([(s.student_id, s.grade) for s in self.students], columns=["student_id", "grade"])

    def truth_document(self):
        return {
            "format_version": artifacts.FORMAT_VERSIONS["synthetic_truth"],
            "name": self.name,
            "seed": self.seed,
            "course_start_ts": self.course_start_ts,
            "archetypes": [{"name": a.name, "share": a.share, "pi": list(a.pi), "A": [list(r) for r in a.A],
                            "B": [list(r) for r in a.B]} for a in self.archetypes],
            "students": [{"student_id": s.student_id, "archetype": s.archetype, "grade": s.grade,
                          "pair": s.pair, "states": list(s.states), "session_starts": list(s.session_starts)}
                         for s in self.students],
        }

    def write(self, directory):
        """Write clickstream, grades, category map and truth sidecar into ``directory``.

        :return: ``file kind -> path``
        """
        if not os.path.isdir(directory):
            os.makedirs(directory)
        paths = {kind: os.path.join(directory, name) for kind, name in
                 (("clicks", clicks_file), ("grades", grades_file), ("categories", categories_file),
                  ("truth", truth_file))}
        artifacts.write_table(paths["clicks"], self.clicks_frame())
        artifacts.write_table(paths["grades"], self.grades_frame())
        artifacts.write_table(paths["categories"], self.category_map.to_frame())
        artifacts.write_json(paths["truth"], self.truth_document())
        log.info("wrote synthetic course %s (%d students) to %s", self.name, len(self.students), directory)
        return paths


def synthetic_category_map(C):
    """A map of ``C`` categories ``cat00, cat01, ...`` with raw prefixes ``cat00/``, ...,
    spread round-robin over the super-groups."""
    if C < 2:
        raise ValueError("need at least 2 categories, got {}".format(C))
    width = len(str(C - 1))
    names = ["cat{:0{}d}".format(i, width) for i in range(C)]
    return CategoryMap(entries={"{}/".format(n): n for n in names}, categories=names, fallback=names[-1],
                       super_groups={n: SUPER_GROUPS[i % len(SUPER_GROUPS)] for i, n in enumerate(names)})


def category_map_for(C):
    """The shipped map when it has ``C`` categories, otherwise :func:`synthetic_category_map`."""
    default = load_category_map()
    return default if default.n_categories == C else synthetic_category_map(C)


def raw_prefixes(category_map):
    """One raw prefix per category id; categories reachable only through the
    fallback get an unmatched ``misc/<category>`` prefix."""
    prefixes = []
    for category in category_map.categories:
        matching = sorted(p for p, c in category_map.entries.items() if c == category)
        prefix = matching[0] if matching else "misc/{}".format(category)
        if category_map.categories[category_map.lookup(prefix)] != category:
            raise ValueError("no raw prefix maps to category {}".format(category))
        prefixes.append(prefix)
    return prefixes


def sample_state_path(pi, A, length, rng):
    states = [int(rng.choice(len(pi), p=pi))]
    for _ in range(length - 1):
        states.append(int(rng.choice(len(pi), p=A[states[-1]])))
    return states


def sample_session_categories(B_row, clicks_mean, rng):
    n = 1 + int(rng.poisson(clicks_mean - 1.0))
    return rng.choice(len(B_row), size=n, p=B_row).tolist()


def sample_behavior_sequences(pi, A, B, n_sequences, mean_length, clicks_mean, seed):
    """Session count-vector sequences straight from an HMM (no timestamps).

    Sequence lengths are ``1 + Poisson(mean_length - 1)``.

    :return: ``(state paths, count-vector sequences)``
    """
    pi, A, B = np.asarray(pi, dtype=float), np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    rng = np.random.default_rng(seed)
    paths, sequences = [], []
    for _ in range(n_sequences):
        states = sample_state_path(pi, A, 1 + int(rng.poisson(mean_length - 1.0)), rng)
        counts = [np.bincount(sample_session_categories(B[k], clicks_mean, rng), minlength=B.shape[1])
                  for k in states]
        paths.append(states)
        sequences.append(counts)
    return paths, sequences


def _grade(archetype, rng):
    if rng.random() < archetype.grade_zero_prob:
        return 0.0
    return max(0.01, round(100.0 * float(rng.beta(archetype.grade_alpha, archetype.grade_beta)), 2))


def _timed_sessions(session_categories, archetype, start_ts, prefixes, items, rng):
    """Lay out sessions in time: gaps within a session never exceed the session gap
    under the default timing, gaps between sessions always do."""
    sessions, ts = [], start_ts
    for index, categories in enumerate(session_categories):
        if index:
            ts += archetype.between_gap_min + int(rng.exponential(archetype.between_gap_mean))
        clicks = []
        for position, category in enumerate(categories):
            if position:
                ts += int(rng.integers(archetype.within_gap_min, archetype.within_gap_max + 1))
            raw = "{}?id={}".format(prefixes[category], int(rng.integers(1, items + 1)))
            clicks.append((ts, raw, int(category)))
        sessions.append(tuple(clicks))
    return tuple(sessions)


def _student_ids(n):
    width = max(5, len(str(n - 1)))
    return ["s{:0{}d}".format(i, width) for i in range(n)]


def generate_course(spec, category_map=None):
    """Generate a course from a :class:`GeneratorSpec`. Every student draws from
    its own child seed of ``spec.seed``; output is in student id order, so
    regenerating a spec is byte-identical.

    :param category_map: Map used for raw click types (default: :func:`category_map_for` ``spec.C``).
    :rtype: :class:`SyntheticCourse`
    :raises ValueError: for an infeasible spec.
    """
    spec.validate()
    category_map = category_map or category_map_for(spec.C)
    if category_map.n_categories != spec.C:
        raise ValueError("category map has {} categories, spec needs {}".format(category_map.n_categories, spec.C))
    prefixes = raw_prefixes(category_map)
    shares = np.array([a.share for a in spec.archetypes])
    course = SyntheticCourse(name=spec.name, seed=spec.seed, course_start_ts=spec.course_start_ts,
                             category_map=category_map, archetypes=spec.archetypes)
    child_seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_students)
    for student_id, child in zip(_student_ids(spec.n_students), child_seeds):
        rng = np.random.default_rng(child)
        archetype = spec.archetypes[int(rng.choice(len(shares), p=shares))]
        pi, A, B = np.asarray(archetype.pi), np.asarray(archetype.A), np.asarray(archetype.B)
        n_sessions = max(1, int(round(rng.lognormal(np.log(archetype.sessions_median), archetype.sessions_sigma))))
        states = sample_state_path(pi, A, n_sessions, rng)
        categories = [sample_session_categories(B[k], archetype.clicks_mean, rng) for k in states]
        start = spec.course_start_ts + int(rng.integers(0, spec.join_window_days * SECONDS_PER_DAY + 1))
        sessions = _timed_sessions(categories, archetype, start, prefixes, spec.items_per_category, rng)
        course.students.append(SyntheticStudent(student_id, archetype.name, _grade(archetype, rng), tuple(states),
                                                sessions))
    log.info("generated %d students over %d archetype(s), K=%d, C=%d", spec.n_students, len(spec.archetypes),
             spec.K_true, spec.C)
    return course


def _emission_rows(category_map, focus_groups, rng, focus_mass=0.85, n_focus=4):
    C = category_map.n_categories
    rows = []
    for groups in focus_groups:
        candidates = [c for c in range(C) if category_map.group_of(c) in groups]
        chosen = rng.choice(candidates, size=min(n_focus, len(candidates)), replace=False)
        row = np.full(C, (1.0 - focus_mass) / C)
        row[chosen] += focus_mass * rng.dirichlet(np.full(len(chosen), 2.0))
        rows.append(row / row.sum())
    return rows


def _diverging_transitions(K, early, target, leave_early=0.15, stay_target=0.8):
    A = np.zeros((K, K))
    others = [k for k in range(K) if k not in early and k not in target]
    for k in early:
        A[k, early] = (1.0 - leave_early) / len(early)
        A[k, target] = leave_early / len(target)
    for k in target:
        A[k, target] = stay_target / len(target)
        A[k, early] = (1.0 - stay_target) / len(early)
    for k in others:
        A[k, early] = 1.0 / len(early)
    return A


def _as_tuples(matrix):
    return tuple(tuple(float(x) for x in row) for row in np.asarray(matrix))


def default_generator_spec(seed=0, n_students=2000, K_true=10, high_share=0.55, category_map=None):
    """The benchmark spec: a ``high`` archetype (share ``high_share``) and a
    ``low`` archetype with the same initial behaviors and emission rows but
    transitions that drift towards different state groups over the sessions.
    High graders also tend to have more sessions; low graders mostly end with
    grade 0.

    :param K_true: At least 3; the first third of the states are shared early
      behaviors, the rest split between the two archetypes.
    """
    if K_true < 3:
        raise ValueError("K_true must be >= 3, got {}".format(K_true))
    category_map = category_map or load_category_map()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    n_early = max(1, K_true // 3)
    rest = list(range(n_early, K_true))
    half = (len(rest) + 1) // 2
    early, high_states, low_states = list(range(n_early)), rest[:half], rest[half:] or rest[:half]
    focus = []
    for k in range(K_true):
        if k in early:
            focus.append({"lecture", "class"})
        elif k in high_states:
            focus.append({"quiz", "forum"} if k % 2 else {"quiz", "lecture"})
        else:
            focus.append({"class", "wiki"} if k % 2 else {"lecture"})
    B = _emission_rows(category_map, focus, rng)
    pi = np.zeros(K_true)
    pi[early] = 1.0 / len(early)
    high = Archetype(name="high", share=high_share, pi=tuple(pi), A=_as_tuples(_diverging_transitions(
        K_true, early, high_states)), B=_as_tuples(B), grade_zero_prob=0.0, sessions_median=16.0)
    low = Archetype(name="low", share=1.0 - high_share, pi=tuple(pi), A=_as_tuples(_diverging_transitions(
        K_true, early, low_states)), B=_as_tuples(B), grade_zero_prob=0.9, grade_alpha=1.0, grade_beta=6.0,
        sessions_median=10.0)
    return GeneratorSpec(seed=seed, n_students=n_students, archetypes=(high, low))


def generate_order_only_pair(n_pairs, seed=0, K=4, C=None, sessions_range=(4, 12), clicks_mean=8.0,
                             category_map=None, course_start_ts=DEFAULT_COURSE_START):
    """Matched pairs of students with the same sessions in opposite order.

    States ``0..K/2-1`` are quiz behaviors and the rest lecture behaviors. For
    every pair one multiset of sessions is drawn (half in quiz states, half in
    lecture states); the class-1 student (grade above 0) does the quiz
    sessions first, the class-0 student (grade 0) the lecture sessions first.
    Count vectors over states, categories and raw click types are identical
    within a pair.

    :rtype: :class:`SyntheticCourse`
    """
    if K < 2 or K % 2:
        raise ValueError("K must be an even number >= 2, got {}".format(K))
    category_map = category_map or (load_category_map() if C is None else category_map_for(C))
    prefixes = raw_prefixes(category_map)
    groups = {"quiz": [], "lecture": []}
    for c in range(category_map.n_categories):
        group = category_map.group_of(c)
        groups.setdefault(group, []).append(c)
    if not groups["quiz"] or not groups["lecture"]:
        groups = {"quiz": list(range(0, category_map.n_categories, 2)),
                  "lecture": list(range(1, category_map.n_categories, 2))}
    half = K // 2
    B = np.zeros((K, category_map.n_categories))
    for k in range(K):
        members = groups["quiz"] if k < half else groups["lecture"]
        B[k, members[(k % half)::half] or members] = 1.0
        B[k] /= B[k].sum()
    archetype = Archetype(name="order", share=1.0, pi=tuple(np.full(K, 1.0 / K)),
                          A=_as_tuples(np.full((K, K), 1.0 / K)), B=_as_tuples(B), clicks_mean=clicks_mean)
    course = SyntheticCourse(name="order-only", seed=seed, course_start_ts=course_start_ts,
                             category_map=category_map, archetypes=(archetype,))
    ids = _student_ids(2 * n_pairs)
    for pair, child in enumerate(np.random.SeedSequence(seed).spawn(n_pairs)):
        rng = np.random.default_rng(child)
        n_half = int(rng.integers(sessions_range[0] // 2, sessions_range[1] // 2 + 1))
        quiz = [int(s) for s in rng.integers(0, half, size=max(1, n_half))]
        lecture = [int(s) for s in rng.integers(half, K, size=max(1, n_half))]
        contents = {}
        for index, state in enumerate(quiz + lecture):
            contents[index] = (state, sample_session_categories(B[state], clicks_mean, rng))
        raw_items = {index: [int(rng.integers(1, ORDER_ONLY_ITEMS + 1)) for _ in cats]
                     for index, (_, cats) in contents.items()}
        quiz_idx = list(range(len(quiz)))
        lecture_idx = list(range(len(quiz), len(quiz) + len(lecture)))
        for member, (order, grade) in enumerate(((quiz_idx + lecture_idx, round(50.0 + 50.0 * rng.random(), 2)),
                                                 (lecture_idx + quiz_idx, 0.0))):
            start = course_start_ts + int(rng.integers(0, 7 * SECONDS_PER_DAY + 1))
            sessions, ts = [], start
            for position, index in enumerate(order):
                if position:
                    ts += archetype.between_gap_min + int(rng.exponential(archetype.between_gap_mean))
                clicks = []
                for click, (category, item) in enumerate(zip(contents[index][1], raw_items[index])):
                    if click:
                        ts += int(rng.integers(archetype.within_gap_min, archetype.within_gap_max + 1))
                    clicks.append((ts, "{}?id={}".format(prefixes[category], item), int(category)))
                sessions.append(tuple(clicks))
            states = tuple(contents[i][0] for i in order)
            course.students.append(SyntheticStudent(ids[2 * pair + member], "order", grade, states, tuple(sessions),
                                                    pair=pair))
    log.info("generated %d order-only pairs (K=%d, C=%d)", n_pairs, K, category_map.n_categories)
    return course


def _format_vector(values):
    return " ".join(repr(float(v)) for v in values)


def _format_matrix(rows):
    return ";".join(_format_vector(r) for r in rows)


def _parse_vector(text):
    return tuple(float(v) for v in text.split())


def _parse_matrix(text):
    return tuple(_parse_vector(r) for r in text.split(";"))


_ARCHETYPE_SCALARS = ("share", "grade_zero_prob", "grade_alpha", "grade_beta", "sessions_median", "sessions_sigma",
                      "clicks_mean", "within_gap_min", "within_gap_max", "between_gap_min", "between_gap_mean")
_SPEC_SCALARS = ("seed", "n_students", "course_start_ts", "join_window_days", "items_per_category", "name")


def spec_to_text(spec):
    """Render a spec as flat ``key=value`` lines. Archetype keys are
    ``archetype.<i>.<field>``; vectors are space-separated and matrix rows are
    separated by ``;``."""
    lines = ["{}={}".format(key, getattr(spec, key)) for key in _SPEC_SCALARS]
    lines.append("archetypes={}".format(len(spec.archetypes)))
    for i, archetype in enumerate(spec.archetypes):
        prefix = "archetype.{}.".format(i)
        lines.append(prefix + "name=" + archetype.name)
        lines.extend("{}{}={!r}".format(prefix, key, getattr(archetype, key)) for key in _ARCHETYPE_SCALARS)
        lines.append(prefix + "pi=" + _format_vector(archetype.pi))
        lines.append(prefix + "A=" + _format_matrix(archetype.A))
        lines.append(prefix + "B=" + _format_matrix(archetype.B))
    return "\n".join(lines) + "\n"


def spec_from_text(text):
    """Inverse of :func:`spec_to_text`; ``#`` starts a comment line."""
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError("line {}: expected key=value, got {!r}".format(number, line))
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    try:
        archetypes = []
        for i in range(int(values["archetypes"])):
            prefix = "archetype.{}.".format(i)
            scalars = {}
            for key in _ARCHETYPE_SCALARS:
                if prefix + key in values:
                    kind = int if key.endswith(("gap_min", "gap_max")) else float
                    scalars[key] = kind(float(values[prefix + key]))
            archetypes.append(Archetype(name=values[prefix + "name"], pi=_parse_vector(values[prefix + "pi"]),
                                        A=_parse_matrix(values[prefix + "A"]), B=_parse_matrix(values[prefix + "B"]),
                                        **scalars))
        spec = GeneratorSpec(seed=int(values["seed"]), n_students=int(values["n_students"]),
                             archetypes=tuple(archetypes),
                             course_start_ts=int(values.get("course_start_ts", DEFAULT_COURSE_START)),
                             join_window_days=int(values.get("join_window_days", 7)),
                             items_per_category=int(values.get("items_per_category", 20)),
                             name=values.get("name", "synthetic"))
    except KeyError as e:
        raise ValueError("generator spec is missing key {}".format(e))
    spec.validate()
    return spec
