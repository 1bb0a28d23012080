import logging
import os
import tempfile
import unittest

from clickpredict import artifacts
from clickpredict.config import DEFAULTS, ConfigError, RunConfig, parse_config_text, parse_course_start
from clickpredict.features import ALL
from clickpredict.logging_config import LOG_LEVELS, configure_logging


class TestRunConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = RunConfig.resolve()
        self.assertEqual(cfg.min_clicks, 101)
        self.assertEqual(cfg.gap_seconds, 3600)
        self.assertEqual(cfg.course_days, (7, 18, 35, ALL))
        self.assertEqual(cfg.models, ("lstm", "svm_l", "svm_c", "mlp"))
        self.assertTrue(cfg.deterministic)
        self.assertEqual(cfg["K"], 10)

    def test_every_default_parses(self):
        cfg = RunConfig.resolve()
        self.assertEqual(set(cfg.values), set(DEFAULTS))

    def test_flags_override_file(self):
        cfg = RunConfig.resolve("K=5\nseed=3\n# comment\n\n", {"K": "7", "seed": None})
        self.assertEqual(cfg.K, 7)
        self.assertEqual(cfg.seed, 3)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            parse_config_text("hidden_size=4")
        with self.assertRaises(ConfigError):
            RunConfig.resolve(overrides={"hidden_size": "4"})

    def test_bad_values(self):
        for key, text in (("K", "ten"), ("deterministic", "maybe"), ("n_clicks", "0,All"), ("tol", "x")):
            with self.assertRaises(ConfigError):
                RunConfig.resolve(overrides={key: text})

    def test_line_without_equals(self):
        with self.assertRaises(ConfigError):
            parse_config_text("K 5")

    def test_echo_is_sorted_and_stable(self):
        first = RunConfig.resolve("seed=1", {"K": "4"}).echo()
        second = RunConfig.resolve(None, {"seed": "1", "K": "4"}).echo()
        self.assertEqual(first, second)
        keys = [line.split("=", 1)[0] for line in first.splitlines()]
        self.assertEqual(keys, sorted(keys))

    def test_missing_attribute(self):
        with self.assertRaises(AttributeError):
            RunConfig.resolve().no_such_key


class TestCourseStart(unittest.TestCase):

    def test_forms(self):
        self.assertIsNone(parse_course_start(""))
        self.assertEqual(parse_course_start("1388534400"), 1388534400)
        self.assertEqual(parse_course_start("2014-01-01"), 1388534400)
        self.assertEqual(parse_course_start("2014-01-01T01:00:00+01:00"), 1388534400)

    def test_garbage(self):
        with self.assertRaises(ConfigError):
            parse_course_start("sometime soon")


class TestArtifacts(unittest.TestCase):

    def test_run_dir_depends_on_config(self):
        self.assertEqual(artifacts.run_dir_name("grid", "a=1\n"), artifacts.run_dir_name("grid", "a=1\n"))
        self.assertNotEqual(artifacts.run_dir_name("grid", "a=1\n"), artifacts.run_dir_name("grid", "a=2\n"))
        self.assertTrue(artifacts.run_dir_name("fit-hmm", "").startswith("fit-hmm-"))

    def test_prepare_run_dir_echoes_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            run_dir = artifacts.prepare_run_dir(tmp, "train", "K=4\n")
            with open(os.path.join(run_dir, artifacts.config_file)) as f:
                self.assertEqual(f.read(), "K=4\n")
            self.assertEqual(artifacts.prepare_run_dir(tmp, "train", "K=4\n"), run_dir)

    def test_write_text_replaces_atomically(self):
        with tempfile.TemporaryDirectory() as tmp:
            dest = os.path.join(tmp, "out.txt")
            artifacts.write_text(dest, "one")
            artifacts.write_text(dest, "two")
            self.assertEqual(os.listdir(tmp), ["out.txt"])
            with open(dest) as f:
                self.assertEqual(f.read(), "two")

    def test_json_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            dest = os.path.join(tmp, "doc.json")
            artifacts.write_json(dest, {"b": 1, "a": [1.5, "x"]})
            self.assertEqual(artifacts.read_json(dest), {"b": 1, "a": [1.5, "x"]})


class TestLoggingConfig(unittest.TestCase):

    def test_levels(self):
        configure_logging("WARNING")
        self.assertEqual(logging.root.level, LOG_LEVELS["WARNING"])
        self.assertEqual(logging.getLogger("matplotlib").level, logging.WARNING)
        configure_logging("INFO")

    def test_illegal_level(self):
        with self.assertRaises(ValueError):
            configure_logging("LOUD")


if __name__ == '__main__':
    unittest.main()
