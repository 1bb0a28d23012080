import os
import tempfile
import unittest
from collections import Counter, OrderedDict
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from clickpredict import artifacts
from clickpredict.baselines import MlpConfig, SvmConfig
from clickpredict.behavior import FitConfig, hmm_fit
from clickpredict.classifiers import ClassifierConfig, predict_labels, train_classifier
from clickpredict.evaluation import (
    EXCLUSION_COLUMNS, UNSEEN_CLICK_TYPE, Course, ExperimentCell, GridConfig, StudentRecord, attach_sequences,
    build_records, evaluate_accuracy, exclusions_frame, filter_students, make_label, prefix_samples, read_results,
    results_frame, run_cell, run_experiment_grid, run_transfer_grid, split_students, split_with_vocab,
    training_vocab, transfer_evaluate, valid_combination
)
from clickpredict.features import ALL, PrefixSpec
from clickpredict.ingest import CategoryMap, ClickEvent, events_to_frame, load_category_map, sessions_to_frame
from clickpredict.lstm import TrainConfig
from clickpredict.synthgen import default_generator_spec, generate_course, generate_order_only_pair
from tests.support import true_state_samples

FAST = ClassifierConfig(lstm=TrainConfig(epochs=2, embedding_dim=4, hidden_dim=4),
                        svm=SvmConfig(epochs=5), mlp=MlpConfig(hidden=8, epochs=5))


def course_from_synthetic(synthetic, name=None):
    events = {s.student_id: [ClickEvent(s.student_id, ts, raw) for session in s.sessions for ts, raw, _ in session]
              for s in synthetic.students}
    grades = {s.student_id: s.grade for s in synthetic.students}
    return Course.from_events(name or synthetic.name, events, grades, synthetic.category_map,
                              course_start_ts=synthetic.course_start_ts)


def synthetic_course(seed=0, n_students=80, name=None):
    return course_from_synthetic(generate_course(default_generator_spec(seed=seed, n_students=n_students,
                                                                        K_true=4)), name)


def record(student_id, grade=50.0, clicks=101):
    return StudentRecord(student_id=student_id, grade=grade, total_clicks=clicks)


class TestLabelsAndFiltering(unittest.TestCase):

    def test_label_threshold(self):
        self.assertEqual(make_label(0.0), 0)
        self.assertEqual(make_label(0.01), 1)
        self.assertEqual(make_label(60.0, threshold=60.0), 0)
        self.assertEqual(make_label(60.5, threshold=60.0), 1)

    def test_label_needs_valid_grade(self):
        for bad in (None, -1.0, 100.5):
            with self.assertRaises(ValueError):
                make_label(bad)

    def test_click_boundary(self):
        kept, excluded = filter_students([record("a", clicks=100), record("b", clicks=101),
                                          record("c", grade=None, clicks=500)])
        self.assertEqual([r.student_id for r in kept], ["b"])
        self.assertEqual(excluded, Counter({"too_few_clicks": 1, "no_grade": 1}))

    def test_exclusions_frame(self):
        frame = exclusions_frame(Counter({"no_grade": 2}), [("empty_prefix", "course_days", 7, "raw", "test", 3)])
        self.assertEqual(list(frame.columns), EXCLUSION_COLUMNS)
        self.assertEqual(list(frame["count"]), [2, 3])


class TestSplit(unittest.TestCase):

    def test_sizes_and_disjointness(self):
        records = [record("s{}".format(i)) for i in range(10)]
        train, test = split_students(records, 0.8, seed=3)
        self.assertEqual((len(train), len(test)), (8, 2))
        self.assertEqual({r.student_id for r in train} | {r.student_id for r in test},
                         {r.student_id for r in records})
        self.assertFalse({r.student_id for r in train} & {r.student_id for r in test})

    def test_training_share_rounds_up(self):
        train, test = split_students([record("s{}".format(i)) for i in range(7)], 0.8)
        self.assertEqual((len(train), len(test)), (6, 1))

    def test_split_ignores_input_order(self):
        records = [record("s{}".format(i)) for i in range(12)]
        first, _ = split_students(records, 0.5, seed=1)
        second, _ = split_students(list(reversed(records)), 0.5, seed=1)
        self.assertEqual([r.student_id for r in first], [r.student_id for r in second])

    def test_invalid_fraction(self):
        with self.assertRaises(ValueError):
            split_students([record("a")], 1.0)

    def test_label_balance_at_2000_students(self):
        rng = np.random.default_rng(11)
        records = [record("s{:04d}".format(i), grade=float(rng.uniform(1.0, 100.0)) if rng.random() < 0.55 else 0.0)
                   for i in range(2000)]
        overall = np.mean([make_label(r.grade) for r in records])
        balanced = 0
        for seed in range(20):
            sides = split_students(records, 0.8, seed)
            balanced += all(abs(np.mean([make_label(r.grade) for r in side]) - overall) <= 0.05 for side in sides)
        self.assertGreaterEqual(balanced, 18)


class TestAccuracyAndCells(unittest.TestCase):

    def test_accuracy(self):
        self.assertEqual(evaluate_accuracy([1, 0, 1, 1], [1, 1, 1, 0]), 0.5)
        with self.assertRaises(ValueError):
            evaluate_accuracy([], [])
        with self.assertRaises(ValueError):
            evaluate_accuracy([1], [1, 0])

    def test_cell_invariants(self):
        with self.assertRaises(ValueError):
            ExperimentCell("c", "n_clicks", 100, "raw", "lstm", "test", 0, 0.5, 0)
        with self.assertRaises(ValueError):
            ExperimentCell("c", "n_clicks", 100, "raw", "lstm", "holdout", 0, 0.5, 3)

    def test_valid_combinations(self):
        self.assertFalse(valid_combination("n_clicks", "hmm_state"))
        self.assertFalse(valid_combination("n_states", "raw"))
        self.assertTrue(valid_combination("n_states", "mmm_state"))
        self.assertTrue(valid_combination("student_days", "category"))

    def test_results_written_and_read(self):
        cells = [ExperimentCell("c", "course_days", 7, "raw", "svm_l", "test", 0, 0.75, 4),
                 ExperimentCell("c", "course_days", ALL, "raw", "svm_l", "test", 0, 0.5, 4)]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "results.csv")
            artifacts.write_table(path, results_frame(cells))
            frame = read_results(path)
        self.assertEqual(list(frame["value"]), ["7", "All"])
        self.assertEqual(list(frame["accuracy"]), [0.75, 0.5])


class TestCourse(unittest.TestCase):

    def test_from_events_sessionizes(self):
        synthetic = generate_course(default_generator_spec(seed=1, n_students=5, K_true=3))
        course = course_from_synthetic(synthetic)
        for student in synthetic.students:
            self.assertEqual(len(course.sessions[student.student_id]), len(student.sessions))
        self.assertEqual(course.course_start_ts, synthetic.course_start_ts)

    def test_load_ingest_directory(self):
        course = synthetic_course(n_students=6)
        with tempfile.TemporaryDirectory() as tmp:
            artifacts.write_table(os.path.join(tmp, "events.csv"), events_to_frame(course.events))
            artifacts.write_table(os.path.join(tmp, "sessions.csv"), sessions_to_frame(course.sessions))
            artifacts.write_table(os.path.join(tmp, "categories.csv"), course.category_map.to_frame())
            grades = pd.DataFrame(sorted(course.grades.items()), columns=["student_id", "grade"])
            artifacts.write_table(os.path.join(tmp, "grades.csv"), grades)
            artifacts.write_json(os.path.join(tmp, "ingest_report.json"),
                                 {"course_name": "loaded", "course_start_ts": course.course_start_ts,
                                  "gap_seconds": 3600})
            loaded = Course.load(tmp)
        self.assertEqual(loaded.name, "loaded")
        self.assertEqual(loaded.grades, course.grades)
        self.assertEqual(loaded.raw_vocab.tokens(), course.raw_vocab.tokens())
        self.assertEqual({k: len(v) for k, v in loaded.sessions.items()},
                         {k: len(v) for k, v in course.sessions.items()})

    def test_load_keeps_na_student_ids(self):
        cmap = load_category_map()
        course = Course.from_events("c", {"NA": [ClickEvent("NA", 10, "quiz/start")],
                                          "s2": [ClickEvent("s2", 20, "wiki/view")]},
                                    {"NA": 40.0, "s2": 0.0}, cmap, course_start_ts=0)
        with tempfile.TemporaryDirectory() as tmp:
            artifacts.write_table(os.path.join(tmp, "events.csv"), events_to_frame(course.events))
            artifacts.write_table(os.path.join(tmp, "categories.csv"), cmap.to_frame())
            artifacts.write_table(os.path.join(tmp, "grades.csv"),
                                  pd.DataFrame([("NA", 40.0), ("s2", 0.0)], columns=["student_id", "grade"]))
            artifacts.write_json(os.path.join(tmp, "ingest_report.json"), {"course_start_ts": 0})
            loaded = Course.load(tmp)
        self.assertEqual(loaded.grades, {"NA": 40.0, "s2": 0.0})
        self.assertEqual(sorted(loaded.events), ["NA", "s2"])


class TestTrainingVocab(unittest.TestCase):

    def test_unseen_click_types_share_one_id(self):
        cmap = load_category_map()
        events = {"a": [ClickEvent("a", 1, "quiz/start"), ClickEvent("a", 2, "wiki/view?page=1")],
                  "b": [ClickEvent("b", 1, "quiz/start"), ClickEvent("b", 2, "forum/read"),
                        ClickEvent("b", 3, "lecture/view")]}
        course = Course.from_events("c", events, {"a": 50.0, "b": 0.0}, cmap, course_start_ts=0)
        train, test = build_records(course)
        vocab = training_vocab([train])
        self.assertEqual(vocab.tokens(), ["quiz/start", "wiki/view?page=1", UNSEEN_CLICK_TYPE])
        sample = attach_sequences([test], course, ["raw"], raw_vocab=vocab)[0].sequences["raw"]
        self.assertEqual(sample.tokens, (0, 2, 2))

    def test_split_vocab_covers_training_students_only(self):
        course = synthetic_course(seed=5, n_students=40)
        records, _ = filter_students(build_records(course), min_clicks=1)
        records = attach_sequences(records, course, ["raw", "category"])
        train, test, vocab = split_with_vocab(records, course, ["raw", "category"], 0.8, seed=2)
        seen = {e.raw_type for r in train for e in r.events}
        self.assertEqual(set(vocab.tokens()), seen | {UNSEEN_CLICK_TYPE})
        self.assertEqual(vocab.size, len(seen) + 1)
        unseen = vocab.id_of(UNSEEN_CLICK_TYPE)
        for r in test:
            expected = tuple(vocab.id_of(e.raw_type) if e.raw_type in seen else unseen for e in r.events)
            self.assertEqual(r.sequences["raw"].tokens, expected)
            self.assertIn("category", r.sequences)

    def test_without_raw_features_nothing_is_reencoded(self):
        records, _ = filter_students(build_records(synthetic_course(seed=5, n_students=10)), min_clicks=1)
        train, test, vocab = split_with_vocab(records, None, ["category"], 0.8, seed=0)
        self.assertIsNone(vocab)
        self.assertEqual(len(train) + len(test), len(records))


class TestExperimentGrid(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.course = synthetic_course(seed=2, n_students=80)
        cls.records, _ = filter_students(build_records(cls.course), min_clicks=1)

    def grid(self, **kwargs):
        settings = dict(models=("svm_l", "svm_c"), feature_sets=("raw", "category"),
                        dimensions=OrderedDict([("course_days", (7, 18, 35, ALL))]), emit_train=False,
                        classifier=FAST)
        settings.update(kwargs)
        return GridConfig(**settings)

    def test_cell_count(self):
        result = run_experiment_grid(self.course, self.records, self.grid())
        test_cells = [c for c in result.cells if c.split == "test"]
        self.assertEqual(len(test_cells), 16)
        self.assertEqual({(c.value, c.feature_set, c.model) for c in test_cells},
                         {(v, f, m) for v in (7, 18, 35, ALL) for f in ("raw", "category")
                          for m in ("svm_l", "svm_c")})

    def test_invalid_combinations_are_skipped(self):
        cfg = self.grid(dimensions=OrderedDict([("n_clicks", (50, ALL)), ("n_states", (5, ALL))]),
                        models=("svm_l",), feature_sets=("raw",))
        result = run_experiment_grid(self.course, self.records, cfg)
        self.assertEqual({c.dimension for c in result.cells}, {"n_clicks"})

    def test_train_cells_emitted(self):
        cfg = self.grid(dimensions=OrderedDict([("n_clicks", (ALL,))]), models=("svm_c",), emit_train=True)
        splits = Counter(c.split for c in run_experiment_grid(self.course, self.records, cfg).cells)
        self.assertEqual(splits, Counter({"train": 2, "test": 2}))

    def test_cell_matches_isolated_run(self):
        cfg = self.grid(dimensions=OrderedDict([("n_clicks", (200,))]), models=("svm_c",), feature_sets=("raw",))
        result = run_experiment_grid(self.course, self.records, cfg)
        cell = [c for c in result.cells if c.value == 200][0]
        records = attach_sequences(self.records, self.course, ["raw"])
        train, test, vocab = split_with_vocab(records, self.course, ["raw"], cfg.train_frac, cfg.seed)
        spec = PrefixSpec("n_clicks", 200)
        _, accuracy = run_cell("svm_c", prefix_samples(train, "raw", spec)[0], prefix_samples(test, "raw", spec)[0],
                               vocab.size, cfg.classifier_for_seed(cfg.seed))
        self.assertEqual(cell.accuracy, accuracy)

    def test_repeats_add_significance(self):
        cfg = self.grid(dimensions=OrderedDict([("n_clicks", (ALL,))]), feature_sets=("category",), repeats=2)
        result = run_experiment_grid(self.course, self.records, cfg)
        self.assertEqual(len(result.comparisons), 1)
        self.assertEqual(sorted({c.seed for c in result.cells}), [0, 1])


class TestTransfer(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.course = synthetic_course(seed=4, n_students=60)
        cls.records, _ = filter_students(build_records(cls.course), min_clicks=1)
        sequences = [[s.counts for s in r.sessions] for r in cls.records]
        cls.hmm = hmm_fit(sequences, FitConfig(K=4, max_iter=10, seed=0))

    def test_self_transfer_equals_test_accuracy(self):
        records = attach_sequences(self.records, self.course, ["hmm_state"], {"hmm": self.hmm})
        train, test = split_students(records, 0.8, seed=0)
        train_samples, _ = prefix_samples(train, "hmm_state", PrefixSpec("course_days", ALL))
        test_samples, _ = prefix_samples(test, "hmm_state", PrefixSpec("course_days", ALL))
        classifier = train_classifier("svm_c", train_samples, self.hmm.K, FAST)
        within = evaluate_accuracy(predict_labels(classifier, test_samples), [s.label for s in test_samples])
        cell = transfer_evaluate(classifier, self.hmm, self.course, test)
        self.assertEqual(cell.split, "transfer")
        self.assertEqual(cell.n, len(test_samples))
        self.assertEqual(cell.accuracy, within)

    def test_needs_state_classifier(self):
        records = attach_sequences(self.records, self.course, ["raw"])
        samples, _ = prefix_samples(records, "raw", PrefixSpec("n_clicks", ALL))
        classifier = train_classifier("svm_l", samples, self.course.raw_vocab.size, FAST)
        with self.assertRaises(ValueError):
            transfer_evaluate(classifier, self.hmm, self.course, self.records)

    def test_category_mismatch(self):
        other = replace(self.course, name="other",
                        category_map=CategoryMap({"a/": "a"}, ["a", "b"], "b", {"a": "quiz", "b": "wiki"}))
        records = attach_sequences(self.records, self.course, ["hmm_state"], {"hmm": self.hmm})
        samples, _ = prefix_samples(records, "hmm_state", PrefixSpec("n_states", ALL))
        classifier = train_classifier("svm_l", samples, self.hmm.K, FAST)
        with self.assertRaises(ValueError):
            transfer_evaluate(classifier, self.hmm, other, [])

    def test_transfer_grid(self):
        twin = synthetic_course(seed=9, n_students=40, name="twin")
        twin_records, _ = filter_students(build_records(twin), min_clicks=1)
        cfg = GridConfig(models=("svm_c",), feature_sets=("raw", "hmm_state"),
                         dimensions=OrderedDict([("n_states", (3, ALL))]), classifier=FAST)
        result = run_transfer_grid(self.course, self.records, twin, twin_records, {"hmm": self.hmm}, cfg)
        transfer = [c for c in result.cells if c.split == "transfer"]
        self.assertEqual(len(transfer), 2)
        self.assertTrue(all(c.course == "twin" and c.feature_set == "hmm_state" for c in transfer))
        self.assertTrue(all(0.0 <= c.accuracy <= 1.0 for c in transfer))
        self.assertTrue(np.all([c.n > 0 for c in result.cells]))


@pytest.mark.slow
class TestOrderOnlySignal(unittest.TestCase):
    """Pair members share every count; only the order of their sessions differs."""

    @classmethod
    def setUpClass(cls):
        course = generate_order_only_pair(150, seed=8)
        samples = true_state_samples(course)
        pairs = {s.student_id: s.pair for s in course.students}
        cls.train = [s for s in samples if pairs[s.student_id] < 100]
        cls.test = [s for s in samples if pairs[s.student_id] >= 100]

    def accuracy(self, kind, cfg):
        classifier = train_classifier(kind, self.train, 4, cfg)
        return evaluate_accuracy(predict_labels(classifier, self.test), [s.label for s in self.test])

    def test_lstm_reads_the_order(self):
        cfg = ClassifierConfig(lstm=TrainConfig(learning_rate=1e-2, epochs=30, embedding_dim=8, hidden_dim=16))
        self.assertGreaterEqual(self.accuracy("lstm", cfg), 0.85)

    def test_counts_are_at_chance(self):
        accuracy = self.accuracy("svm_c", ClassifierConfig())
        self.assertGreaterEqual(accuracy, 0.45)
        self.assertLessEqual(accuracy, 0.55)


@pytest.mark.slow
class TestDefaultSyntheticCourse(unittest.TestCase):
    """The 2000-student benchmark course with a 10-state model fitted on it."""

    @classmethod
    def setUpClass(cls):
        cls.course = course_from_synthetic(generate_course(default_generator_spec(seed=0)))
        cls.records, _ = filter_students(build_records(cls.course))
        cls.hmm = hmm_fit([[s.counts for s in r.sessions] for r in cls.records], FitConfig(K=10, max_iter=50, seed=0))
        cls.twin = course_from_synthetic(generate_course(default_generator_spec(seed=1)), "twin")
        cls.twin_records, _ = filter_students(build_records(cls.twin))

    def test_full_history_beats_first_week(self):
        cfg = GridConfig(models=("lstm",), feature_sets=("hmm_state",),
                         dimensions=OrderedDict([("course_days", (7, ALL))]), emit_train=False)
        cells = run_experiment_grid(self.course, self.records, cfg, {"hmm": self.hmm}).cells
        accuracy = {c.value: c.accuracy for c in cells if c.split == "test"}
        self.assertGreaterEqual(accuracy[ALL] - accuracy[7], 0.05)

    def transfer(self, course_b, records_b):
        cfg = GridConfig(models=("svm_c",), feature_sets=("hmm_state",),
                         dimensions=OrderedDict([("course_days", (ALL,))]), emit_train=False)
        cells = run_transfer_grid(self.course, self.records, course_b, records_b, {"hmm": self.hmm}, cfg).cells
        return {c.split: c.accuracy for c in cells}

    def test_twin_course_transfers(self):
        accuracy = self.transfer(self.twin, self.twin_records)
        self.assertLessEqual(abs(accuracy["transfer"] - accuracy["test"]), 0.05)

    def test_unrelated_grades_transfer_at_chance(self):
        rng = np.random.default_rng(3)
        ids = sorted(self.twin.grades)
        shuffled = dict(zip(ids, rng.permutation([self.twin.grades[i] for i in ids])))
        unrelated = replace(self.twin, name="unrelated", grades={k: float(v) for k, v in shuffled.items()})
        records, _ = filter_students(build_records(unrelated))
        accuracy = self.transfer(unrelated, records)
        self.assertLessEqual(abs(accuracy["transfer"] - 0.5), 0.06)
        self.assertGreater(accuracy["test"] - accuracy["transfer"], 0.05)


if __name__ == '__main__':
    unittest.main()
