#! /usr/bin/env python
"""The ``clickpredict`` command: ingest clickstream logs, fit behavior models,
extract features, train and evaluate grade classifiers, run the prefix
experiment grid and cross-course transfer, generate synthetic courses and
plot results.

Every command writes into its own run directory under ``out_dir`` (named by
the command and a hash of the resolved configuration) and prints that
directory on stdout. Failures exit nonzero after printing one line
``error: {"code": ..., "message": ...}`` on stderr.
"""
import argparse
import json
import logging
import os
import sys
from collections import OrderedDict

import pandas as pd

from clickpredict import artifacts
from clickpredict.artifacts import FormatError
from clickpredict.baselines import MlpConfig, SvmConfig
from clickpredict.behavior import (FitConfig, behaviors_frame, decode_states, hmm_fit, load_model, mmm_fit,
                                   save_model, summarize_behaviors, transition_report, transitions_frames)
from clickpredict.classifiers import (ClassifierConfig, load_classifier, predict_labels, save_classifier,
                                      train_classifier, training_log_frame, vocab_hash)
from clickpredict.config import DEFAULTS, ConfigError, RunConfig, parse_course_start
from clickpredict.convergence import DivergenceError
from clickpredict.evaluation import (STATE_MODELS, Course, ExperimentCell, GridConfig, attach_sequences,
                                     build_records, evaluate_accuracy, exclusions_frame, filter_students,
                                     prefix_samples, read_results, results_frame, run_experiment_grid,
                                     run_transfer_grid, split_with_vocab, valid_combination, vocab_size_for)
from clickpredict.features import PrefixSpec, ngram_indicative, samples_to_frame, state_unigram_indicative
from clickpredict.ingest import (events_to_frame, load_category_map, parse_grades, parse_log, sessions_to_frame,
                                 supported_log_formats)
from clickpredict.logging_config import configure_logging
from clickpredict.lstm import TrainConfig
from clickpredict.plotting import render_plots
from clickpredict.stats import significance_frame
from clickpredict.synthgen import (default_generator_spec, generate_course, generate_order_only_pair,
                                   spec_from_text, spec_to_text)

log = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_CONFIG = 2


class CommandError(RuntimeError):
    """Raised when a command cannot run with the given inputs.

    :param code: Short machine-readable error code.
    :param exit_code: Process exit status.
    """

    def __init__(self, code, message, exit_code=EXIT_FAILURE):
        super().__init__(message)
        self.code = code
        self.message = message
        self.exit_code = exit_code


def _require(cfg, key):
    value = cfg[key]
    if not value:
        raise CommandError("missing_input", "{} is not set (use --{} or a config file)".format(
            key, key.replace("_", "-")), EXIT_CONFIG)
    return value


def _require_file(path):
    if not os.path.exists(path):
        raise CommandError("missing_file", "no such file or directory: {}".format(path))
    return path


def fit_config(cfg):
    try:
        return FitConfig(K=cfg.K, max_iter=cfg.max_iter, tol=cfg.tol, seed=cfg.seed, epsilon=cfg.epsilon,
                         n_init=cfg.n_init, threads=cfg.threads)
    except ValueError as e:
        raise ConfigError(str(e))


def classifier_config(cfg):
    try:
        return ClassifierConfig(
            lstm=TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs, batch_size=cfg.batch_size,
                             dropout_p=cfg.dropout, seed=cfg.seed, max_seq_len=cfg.max_seq_len,
                             embedding_dim=cfg.embedding_dim, hidden_dim=cfg.hidden_dim,
                             deterministic=cfg.deterministic, threads=cfg.threads),
            svm=SvmConfig(lam=cfg.svm_lambda, epochs=cfg.svm_epochs, seed=cfg.seed),
            mlp=MlpConfig(hidden=cfg.mlp_hidden, learning_rate=cfg.mlp_learning_rate, epochs=cfg.mlp_epochs,
                          batch_size=cfg.batch_size, seed=cfg.seed))
    except ValueError as e:
        raise ConfigError(str(e))


def grid_config(cfg):
    try:
        return GridConfig(models=cfg.models, feature_sets=cfg.feature_sets,
                          dimensions=OrderedDict((d, cfg[d]) for d in cfg.dimensions),
                          train_frac=cfg.train_frac, seed=cfg.seed, repeats=cfg.repeats,
                          label_threshold=cfg.label_threshold, classifier=classifier_config(cfg))
    except (ValueError, KeyError) as e:
        raise ConfigError("bad grid configuration: {}".format(e))


def prefix_spec(cfg):
    try:
        return PrefixSpec.parse(cfg.dimension, cfg.value)
    except ValueError as e:
        raise ConfigError(str(e))


def load_course(cfg, key="ingested"):
    directory = _require_file(_require(cfg, key))
    return Course.load(directory)


def load_behavior_models(cfg, feature_labels):
    """Behavior models needed by the state feature sets among ``feature_labels``."""
    models = {}
    for label in feature_labels:
        kind = STATE_MODELS.get(label)
        if kind is None or kind in models:
            continue
        path = cfg["{}_model".format(kind)]
        if path:
            models[kind] = load_model(_require_file(path), kind)
        elif cfg.behavior_model:
            model = load_model(_require_file(cfg.behavior_model))
            if model.kind == kind:
                models[kind] = model
        if kind not in models:
            raise CommandError("missing_model", "{} features need a {} model (set {}_model)".format(
                label, kind, kind), EXIT_CONFIG)
    return models


def kept_records(cfg, course):
    records, excluded = filter_students(build_records(course), cfg.min_clicks)
    return records, excluded


def vocab_tokens(label, course, behavior_models, raw_vocab=None):
    if label == "raw":
        return (course.raw_vocab if raw_vocab is None else raw_vocab).tokens()
    if label == "category":
        return list(course.category_map.categories)
    return ["state_{}".format(k) for k in range(vocab_size_for(label, course, behavior_models))]


def _check_feature_set(cfg, label):
    if label not in ("raw", "category") and label not in STATE_MODELS:
        raise ConfigError("unknown feature set: {}".format(label))
    return label


def cmd_ingest(cfg, run_dir):
    clicks = _require_file(_require(cfg, "clicks"))
    if cfg.log_format not in supported_log_formats:
        raise ConfigError("log_format must be one of {}, got {}".format(supported_log_formats, cfg.log_format))
    category_map = load_category_map(_require_file(cfg.categories) if cfg.categories else None)
    parsed = parse_log(clicks, cfg.log_format)
    grades, bad_grades = parse_grades(_require_file(_require(cfg, "grades")))
    course = Course.from_events(cfg.course_name, parsed.events, grades, category_map, cfg.gap_seconds,
                                parse_course_start(cfg.course_start))
    artifacts.write_table(os.path.join(run_dir, "events.csv"), events_to_frame(course.events))
    artifacts.write_table(os.path.join(run_dir, "sessions.csv"), sessions_to_frame(course.sessions))
    grade_rows = [(sid, grades[sid]) for sid in sorted(grades)]
    artifacts.write_table(os.path.join(run_dir, "grades.csv"),
                          pd.DataFrame(grade_rows, columns=["student_id", "grade"]))
    artifacts.write_table(os.path.join(run_dir, "categories.csv"), category_map.to_frame())
    n_sessions = sum(len(s) for s in course.sessions.values())
    without_grade = sum(1 for sid in course.student_ids if sid not in grades)
    artifacts.write_json(os.path.join(run_dir, "ingest_report.json"), OrderedDict([
        ("format_version", artifacts.FORMAT_VERSIONS["clickstream"]),
        ("course_name", course.name),
        ("course_start_ts", course.course_start_ts),
        ("gap_seconds", cfg.gap_seconds),
        ("n_events", parsed.n_events),
        ("n_students", len(course.events)),
        ("n_sessions", n_sessions),
        ("n_raw_types", course.raw_vocab.size),
        ("malformed_log_rows", parsed.malformed),
        ("malformed_grade_rows", bad_grades),
        ("students_without_grade", without_grade),
    ]))
    log.info("ingested %d students, %d sessions", len(course.events), n_sessions)


def _fit_behavior(cfg, run_dir, kind):
    course = load_course(cfg)
    fit_cfg = fit_config(cfg)
    names = tuple(course.category_map.categories)
    student_sessions = [[s.counts for s in sessions] for sessions in course.sessions.values() if sessions]
    if kind == "mmm":
        params = mmm_fit([c for sessions in student_sessions for c in sessions], fit_cfg, names)
    else:
        params = hmm_fit(student_sessions, fit_cfg, names)
    save_model(params, os.path.join(run_dir, "{}.json".format(kind)))
    table = summarize_behaviors(params, course.category_map)
    artifacts.write_table(os.path.join(run_dir, "behaviors.csv"), behaviors_frame(table))
    if kind == "hmm":
        initial, transitions = transitions_frames(transition_report(params))
        artifacts.write_table(os.path.join(run_dir, "initial.csv"), initial)
        artifacts.write_table(os.path.join(run_dir, "transitions.csv"), transitions)
    else:
        artifacts.write_table(os.path.join(run_dir, "mixture.csv"),
                              pd.DataFrame({"state": range(params.K), "weight": params.pi}))
    log.info("fitted %s with K=%d: final loglik %.4f after %d iteration(s)", kind, params.K, params.final_loglik,
             len(params.loglik_trace))


def cmd_fit_mmm(cfg, run_dir):
    _fit_behavior(cfg, run_dir, "mmm")


def cmd_fit_hmm(cfg, run_dir):
    _fit_behavior(cfg, run_dir, "hmm")


def cmd_decode(cfg, run_dir):
    course = load_course(cfg)
    model = load_model(_require_file(_require(cfg, "behavior_model")))
    rows = []
    for student_id, sessions in course.sessions.items():
        for index, (session, state) in enumerate(zip(sessions, decode_states(sessions, model))):
            rows.append((student_id, index, session.start_ts, state))
    artifacts.write_table(os.path.join(run_dir, "states.csv"),
                          pd.DataFrame(rows, columns=["student_id", "session_index", "start_ts", "state"]))
    log.info("decoded %d sessions with the %s model", len(rows), model.kind)


def _labelled_records(cfg, course, labels, behavior_models):
    records, excluded = kept_records(cfg, course)
    return attach_sequences(records, course, labels, behavior_models, cfg.label_threshold), excluded


def cmd_extract(cfg, run_dir):
    label = _check_feature_set(cfg, cfg.feature_set)
    spec = prefix_spec(cfg)
    if not valid_combination(spec.dimension, label):
        raise CommandError("invalid_combination", "prefix dimension {} does not apply to {} features".format(
            spec.dimension, label), EXIT_CONFIG)
    course = load_course(cfg)
    models = load_behavior_models(cfg, [label])
    records, excluded = _labelled_records(cfg, course, [label], models)
    samples, empty = prefix_samples(records, label, spec)
    artifacts.write_table(os.path.join(run_dir, "features.csv"), samples_to_frame(samples))
    cell_exclusions = [("empty_prefix", spec.dimension, spec.value, label, "all", empty)] if empty else []
    artifacts.write_table(os.path.join(run_dir, "exclusions.csv"), exclusions_frame(excluded, cell_exclusions))


def cmd_analyze_ngrams(cfg, run_dir):
    label = _check_feature_set(cfg, cfg.feature_set)
    if not 1 <= cfg.ngram_n <= 3:
        raise ConfigError("ngram_n must lie in [1, 3], got {}".format(cfg.ngram_n))
    course = load_course(cfg)
    models = load_behavior_models(cfg, [label])
    records, _ = _labelled_records(cfg, course, [label], models)
    samples = [r.sequences[label] for r in records]
    tokens = vocab_tokens(label, course, models)
    report = ngram_indicative(samples, [s.label for s in samples], cfg.ngram_n, cfg.top_k)
    artifacts.write_table(os.path.join(run_dir, "ngrams.csv"), report.to_frame(lambda t: tokens[t]))
    if label in STATE_MODELS:
        categories = course.category_map.categories
        per_state = state_unigram_indicative([(r.sessions, r.sequences[label].tokens) for r in records],
                                             [r.sequences[label].label for r in records], cfg.top_k)
        frames = []
        for state, state_report in per_state.items():
            frame = state_report.to_frame(lambda c: categories[c])
            frame.insert(0, "state", state)
            frames.append(frame)
        if frames:
            artifacts.write_table(os.path.join(run_dir, "state_ngrams.csv"), pd.concat(frames, ignore_index=True))


def cmd_train(cfg, run_dir):
    label = _check_feature_set(cfg, cfg.feature_set)
    spec = prefix_spec(cfg)
    if not valid_combination(spec.dimension, label):
        raise CommandError("invalid_combination", "prefix dimension {} does not apply to {} features".format(
            spec.dimension, label), EXIT_CONFIG)
    classifier_cfg = classifier_config(cfg)
    course = load_course(cfg)
    models = load_behavior_models(cfg, [label])
    records, _ = _labelled_records(cfg, course, [label], models)
    train, test, raw_vocab = split_with_vocab(records, course, [label], cfg.train_frac, cfg.seed, cfg.label_threshold)
    train_samples, _ = prefix_samples(train, label, spec)
    test_samples, _ = prefix_samples(test, label, spec)
    if len({s.label for s in train_samples}) < 2:
        raise CommandError("single_class", "training split has a single label; nothing to learn")
    vocab_size = vocab_size_for(label, course, models, raw_vocab)
    classifier = train_classifier(cfg.model, train_samples, vocab_size, classifier_cfg, validation=test_samples,
                                  tokens=vocab_tokens(label, course, models, raw_vocab))
    classifier.config.update({"feature_label": label, "dimension": spec.dimension, "value": spec.value,
                              "train_frac": cfg.train_frac, "label_threshold": cfg.label_threshold})
    save_classifier(classifier, os.path.join(run_dir, "classifier.json"))
    artifacts.write_table(os.path.join(run_dir, "training_log.csv"), training_log_frame(classifier.training_log))
    cells = []
    for split, samples in (("train", train_samples), ("test", test_samples)):
        if samples:
            accuracy = evaluate_accuracy(predict_labels(classifier, samples), [s.label for s in samples])
            cells.append(ExperimentCell(course.name, spec.dimension, spec.value, label, cfg.model, split, cfg.seed,
                                        accuracy, len(samples)))
    artifacts.write_table(os.path.join(run_dir, "results.csv"), results_frame(cells))


def cmd_evaluate(cfg, run_dir):
    classifier = load_classifier(_require_file(_require(cfg, "classifier")))
    label = _check_feature_set(cfg, classifier.config.get("feature_label", cfg.feature_set))
    spec = prefix_spec(cfg)
    if not valid_combination(spec.dimension, label):
        raise CommandError("invalid_combination", "prefix dimension {} does not apply to {} features".format(
            spec.dimension, label), EXIT_CONFIG)
    course = load_course(cfg)
    models = load_behavior_models(cfg, [label])
    records, _ = _labelled_records(cfg, course, [label], models)
    _, test, raw_vocab = split_with_vocab(records, course, [label], cfg.train_frac, cfg.seed, cfg.label_threshold)
    if classifier.vocab_hash and classifier.vocab_hash != vocab_hash(vocab_tokens(label, course, models, raw_vocab)):
        raise FormatError("classifier vocabulary does not match {} features of {}".format(label, course.name))
    samples, _ = prefix_samples(test, label, spec)
    if not samples:
        raise CommandError("no_samples", "no test student has a non-empty prefix")
    accuracy = evaluate_accuracy(predict_labels(classifier, samples), [s.label for s in samples])
    cell = ExperimentCell(course.name, spec.dimension, spec.value, label, classifier.model_kind, "test", cfg.seed,
                          accuracy, len(samples))
    artifacts.write_table(os.path.join(run_dir, "results.csv"), results_frame([cell]))


def _write_grid_outputs(run_dir, result, excluded):
    artifacts.write_table(os.path.join(run_dir, "results.csv"), results_frame(result.cells))
    artifacts.write_table(os.path.join(run_dir, "exclusions.csv"), exclusions_frame(excluded, result.exclusions))
    if result.comparisons:
        artifacts.write_table(os.path.join(run_dir, "significance.csv"), significance_frame(result.comparisons))
    log.info("wrote %d result cell(s)", len(result.cells))


def cmd_grid(cfg, run_dir):
    grid = grid_config(cfg)
    course = load_course(cfg)
    models = load_behavior_models(cfg, grid.feature_sets)
    records, excluded = kept_records(cfg, course)
    result = run_experiment_grid(course, records, grid, models)
    _write_grid_outputs(run_dir, result, excluded)


def cmd_transfer(cfg, run_dir):
    grid = grid_config(cfg)
    course_a = load_course(cfg)
    course_b = load_course(cfg, "transfer_ingested")
    labels = [label for label in grid.feature_sets if label in STATE_MODELS]
    if not labels:
        raise CommandError("invalid_combination", "transfer needs mmm_state or hmm_state features", EXIT_CONFIG)
    models = load_behavior_models(cfg, labels)
    records_a, excluded = kept_records(cfg, course_a)
    records_b, _ = kept_records(cfg, course_b)
    result = run_transfer_grid(course_a, records_a, course_b, records_b, models, grid)
    _write_grid_outputs(run_dir, result, excluded)


def cmd_synth(cfg, run_dir):
    if cfg.synth_order_only:
        course = generate_order_only_pair(cfg.synth_pairs, seed=cfg.seed)
    else:
        if cfg.synth_spec:
            with open(_require_file(cfg.synth_spec), encoding="utf-8") as f:
                spec = spec_from_text(f.read())
        else:
            spec = default_generator_spec(seed=cfg.seed, n_students=cfg.synth_students, K_true=cfg.synth_states,
                                          high_share=cfg.synth_high_share)
        artifacts.write_text(os.path.join(run_dir, "spec.txt"), spec_to_text(spec))
        course = generate_course(spec)
    course.write(run_dir)


def cmd_plot(cfg, run_dir):
    results = read_results(_require_file(_require(cfg, "results")))
    if not render_plots(results, run_dir):
        raise CommandError("no_results", "results file has no test cells to plot")


def cmd_version(cfg, run_dir):
    print("clickpredict {}".format(artifacts.package_version()))
    for kind, version in artifacts.FORMAT_VERSIONS.items():
        print("{}={}".format(kind, version))


COMMANDS = OrderedDict([
    ("ingest", (cmd_ingest, "Parse a clickstream log and grades, categorise clicks and segment sessions.")),
    ("fit-mmm", (cmd_fit_mmm, "Fit a multinomial mixture behavior model to the sessions of an ingested course.")),
    ("fit-hmm", (cmd_fit_hmm, "Fit a hidden Markov behavior model to the session sequences of an ingested course.")),
    ("decode", (cmd_decode, "Assign a behavior state to every session with a fitted model.")),
    ("extract", (cmd_extract, "Dump one feature set, truncated to one prefix, per kept student.")),
    ("analyze-ngrams", (cmd_analyze_ngrams, "Rank the n-grams most frequent among high and low graders.")),
    ("train", (cmd_train, "Train one classifier on the training split.")),
    ("evaluate", (cmd_evaluate, "Score a trained classifier on the test split.")),
    ("grid", (cmd_grid, "Run the prefix experiment grid.")),
    ("transfer", (cmd_transfer, "Train on one course and evaluate on another.")),
    ("synth", (cmd_synth, "Generate a synthetic course.")),
    ("plot", (cmd_plot, "Render accuracy curves from a results CSV.")),
    ("version", (cmd_version, "Print the package version and file format versions.")),
])
"""Subcommand name -> (handler, description)."""

NO_RUN_DIR = {"version"}


def build_parser():
    """Argument parser with one subcommand per entry of :attr:`COMMANDS`.
    Every config key is accepted by every subcommand as ``--key-name`` or ``--key_name``."""
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument(
        "--config", metavar="FILE", type=str, default=None,
        help="Config file of key=value lines; flags override its values.")
    for key, option in DEFAULTS.items():
        flags = ["--{}".format(key.replace("_", "-"))]
        if "_" in key:
            flags.append("--{}".format(key))
        options.add_argument(*flags, dest=key, metavar="VALUE", type=str, default=None,
                             help="{} Default: {}".format(option.help, option.default or "(empty)"))
    parser = argparse.ArgumentParser(
        prog="clickpredict",
        description="Learner behavior modeling and grade prediction from clickstream logs.")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for name, (_, description) in COMMANDS.items():
        subparsers.add_parser(name, parents=[options], help=description, description=description)
    return parser


def resolve_config(args):
    file_text = None
    if args.config:
        with open(_require_file(args.config), encoding="utf-8") as f:
            file_text = f.read()
    return RunConfig.resolve(file_text, {key: getattr(args, key) for key in DEFAULTS})


def report_error(code, message, exit_code):
    log.error("%s: %s", code, message)
    print("error: {}".format(json.dumps({"code": code, "message": message}, ensure_ascii=False)), file=sys.stderr)
    return exit_code


def run(args):
    cfg = resolve_config(args)
    try:
        configure_logging(cfg.log_level)
    except ValueError as e:
        raise ConfigError(str(e))
    handler = COMMANDS[args.command][0]
    run_dir = None
    if args.command not in NO_RUN_DIR:
        run_dir = artifacts.prepare_run_dir(cfg.out_dir, args.command, cfg.echo())
    handler(cfg, run_dir)
    if run_dir is not None:
        print(run_dir)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except CommandError as e:
        return report_error(e.code, e.message, e.exit_code)
    except ConfigError as e:
        return report_error("config", str(e), EXIT_CONFIG)
    except FormatError as e:
        return report_error("format", str(e), EXIT_FAILURE)
    except DivergenceError as e:
        return report_error("divergence", str(e), EXIT_FAILURE)
    except (FileNotFoundError, ValueError) as e:
        return report_error("invalid_input", str(e), EXIT_FAILURE)
    except Exception as e:
        log.exception("failed with exception")
        return report_error("internal", "{}: {}".format(type(e).__name__, e), EXIT_FAILURE)
    return 0


if __name__ == "__main__":
    sys.exit(main())
