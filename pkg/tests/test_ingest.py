import io
import os
import tempfile
import unittest

import numpy as np

from clickpredict.artifacts import FormatError
from clickpredict.ingest import (
    FALLBACK_KEY, SUPER_GROUPS, ClickEvent, apply_categories, build_vocab, events_from_frame, events_to_frame,
    load_category_map, parse_grades, segment_sessions, sessions_to_frame
)
from tests.support import parse_bytes


def categorised(timestamps, category_ids=None, student_id="s1"):
    category_ids = category_ids or [0] * len(timestamps)
    return [ClickEvent(student_id, ts, "lecture/view", c) for ts, c in zip(timestamps, category_ids)]


class TestParseLog(unittest.TestCase):
    """Exercise clickstream parsing."""

    def test_csv_skips_and_counts_malformed_rows(self):
        data = (b"student_id,timestamp,click_type\n"
                b"s2,200,quiz/start\n"
                b"s1,100,lecture/view?id=3\n"
                b"s1,abc,lecture/view\n"
                b"s1,-5,lecture/view\n"
                b"s1,150,\n"
                b",150,lecture/view\n"
                b"s1,50,forum/read\n")
        result = parse_bytes(data, "csv")
        self.assertEqual(result.malformed, 4)
        self.assertEqual(list(result.events), ["s1", "s2"])
        self.assertEqual([e.timestamp for e in result.events["s1"]], [50, 100])
        self.assertEqual(result.n_events, 3)

    def test_jsonl(self):
        data = (b'{"student_id": "a", "timestamp": 10, "click_type": "wiki/view"}\n'
                b'not json\n'
                b'\n'
                b'{"student_id": "a", "timestamp": 5}\n'
                b'{"student_id": "a", "timestamp": 3, "click_type": "quiz/start"}\n')
        result = parse_bytes(data, "jsonl")
        self.assertEqual(result.malformed, 2)
        self.assertEqual([e.raw_type for e in result.events["a"]], ["quiz/start", "wiki/view"])

    def test_jsonl_invalid_utf8_line_is_malformed(self):
        data = (b'{"student_id": "s", "timestamp": 1, "click_type": "a"}\n'
                b'\xff\xfe\n'
                b'{"student_id": "s", "timestamp": 2, "click_type": "b"}\n')
        result = parse_bytes(data, "jsonl")
        self.assertEqual(result.malformed, 1)
        self.assertEqual([e.raw_type for e in result.events["s"]], ["a", "b"])

    def test_csv_invalid_utf8_row_is_malformed(self):
        data = b"student_id,timestamp,click_type\ns,1,a\ns,2,\xff\xfe\ns,3,c\n"
        result = parse_bytes(data, "csv")
        self.assertEqual(result.malformed, 1)
        self.assertEqual([e.raw_type for e in result.events["s"]], ["a", "c"])

    def test_equal_timestamps_keep_input_order(self):
        data = b"student_id,timestamp,click_type\ns,7,b\ns,7,a\ns,7,c\n"
        result = parse_bytes(data)
        self.assertEqual([e.raw_type for e in result.events["s"]], ["b", "a", "c"])

    def test_missing_column_is_a_format_error(self):
        with self.assertRaises(FormatError):
            parse_bytes(b"student,timestamp,click_type\ns,1,a\n")

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            parse_bytes(b"", "xml")


class TestParseGrades(unittest.TestCase):

    def test_out_of_range_grades_are_skipped(self):
        grades, malformed = parse_grades(io.StringIO("student_id,grade\na,0\nb,100\nc,101\nd,-1\ne,x\nf,55.5\n"))
        self.assertEqual(grades, {"a": 0.0, "b": 100.0, "f": 55.5})
        self.assertEqual(malformed, 3)


class TestCategoryMap(unittest.TestCase):

    def setUp(self):
        self.cmap = load_category_map()

    def test_default_map_has_46_categories(self):
        self.assertEqual(self.cmap.n_categories, 46)
        self.assertEqual(self.cmap.fallback, "class_other")
        self.assertEqual(set(self.cmap.super_groups.values()), set(SUPER_GROUPS))

    def test_longest_prefix_wins(self):
        self.assertEqual(self.cmap.categories[self.cmap.lookup("lecture/view?lecture_id=12")], "lecture_view")
        self.assertEqual(self.cmap.categories[self.cmap.lookup("quiz/submit/final")], "quiz_submit")

    def test_unmatched_type_gets_fallback(self):
        self.assertEqual(self.cmap.lookup("never/seen"), self.cmap.category_id("class_other"))

    def test_lookup_is_pure(self):
        self.assertEqual(self.cmap.lookup("wiki/edit?page=1"), self.cmap.lookup("wiki/edit?page=1"))

    def test_to_frame_reloads_to_same_ids(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "categories.csv")
            self.cmap.to_frame().to_csv(path, index=False)
            reloaded = load_category_map(path)
        self.assertEqual(reloaded.categories, self.cmap.categories)
        self.assertEqual(reloaded.entries, self.cmap.entries)

    def test_map_without_fallback(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "map.csv")
            with open(path, "w") as f:
                f.write("raw_prefix,category,super_group\nq/,quiz,quiz\n")
            with self.assertRaises(FormatError):
                load_category_map(path)

    def test_unknown_super_group(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "map.csv")
            with open(path, "w") as f:
                f.write("raw_prefix,category,super_group\n{},other,misc\n".format(FALLBACK_KEY))
            with self.assertRaises(ValueError):
                load_category_map(path)

    def test_apply_categories(self):
        events = [ClickEvent("s", 1, "forum/thread/view"), ClickEvent("s", 2, "zzz")]
        ids = [e.category_id for e in apply_categories(events, self.cmap)]
        self.assertEqual(ids[1], self.cmap.category_id("class_other"))
        self.assertEqual(self.cmap.group_of(ids[0]), "forum")


class TestSegmentSessions(unittest.TestCase):

    def test_gap_must_be_exceeded(self):
        sessions = segment_sessions(categorised([0, 3600, 7201, 7300]), 3)
        self.assertEqual([len(s) for s in sessions], [2, 2])
        self.assertEqual([(s.start_ts, s.end_ts) for s in sessions], [(0, 3600), (7201, 7300)])

    def test_counts_cover_every_click(self):
        events = categorised([0, 10, 20, 5000], [0, 2, 2, 1])
        sessions = segment_sessions(events, 3)
        np.testing.assert_array_equal(sessions[0].counts, [1, 0, 2])
        np.testing.assert_array_equal(sessions[1].counts, [0, 1, 0])
        self.assertEqual(sum(int(s.counts.sum()) for s in sessions), len(events))

    def test_single_click_session(self):
        sessions = segment_sessions(categorised([42]), 2)
        self.assertEqual(len(sessions), 1)
        self.assertEqual(sessions[0].start_ts, sessions[0].end_ts)

    def test_no_events(self):
        self.assertEqual(segment_sessions([], 3), [])

    def test_uncategorised_events_rejected(self):
        with self.assertRaises(ValueError):
            segment_sessions([ClickEvent("s", 1, "x")], 3)

    def test_unsorted_events_rejected(self):
        with self.assertRaises(ValueError):
            segment_sessions(categorised([10, 5]), 3)

    def test_invalid_gap(self):
        with self.assertRaises(ValueError):
            segment_sessions(categorised([1]), 3, gap_seconds=0)

    def test_session_frame(self):
        sessions = {"s1": segment_sessions(categorised([0, 1, 9000], [1, 0, 2]), 3)}
        frame = sessions_to_frame(sessions)
        self.assertEqual(list(frame["clicks"]), ["1 0", "2"])
        self.assertEqual(list(frame["start_ts"]), [0, 9000])
        self.assertEqual(list(frame["end_ts"]), [1, 9000])

    def test_event_frames(self):
        events = {"s1": categorised([3, 4], [1, 2])}
        self.assertEqual(events_from_frame(events_to_frame(events)), events)


class TestVocabulary(unittest.TestCase):

    def test_ids_by_first_occurrence(self):
        vocab = build_vocab(["b", "a", "b", "c"])
        self.assertEqual(vocab.tokens(), ["b", "a", "c"])
        self.assertEqual(vocab.id_of("c"), 2)
        self.assertEqual(vocab.token_of(1), "a")
        self.assertEqual(len(vocab), 3)

    def test_fallback_absorbs_unseen_tokens(self):
        vocab = build_vocab(["b", "a", "b"], fallback="?")
        self.assertEqual(vocab.tokens(), ["b", "a", "?"])
        self.assertEqual(vocab.encode("a"), 1)
        self.assertEqual(vocab.encode("never"), 2)

    def test_unseen_token_without_fallback(self):
        with self.assertRaises(KeyError):
            build_vocab(["a"]).encode("b")


if __name__ == '__main__':
    unittest.main()
