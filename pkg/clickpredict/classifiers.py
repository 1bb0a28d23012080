"""Uniform front for the grade classifiers.

A model kind names the learner and the input it sees:

* ``lstm``: the token sequence itself;
* ``svm_l``: a linear SVM on the sequence length;
* ``svm_c``: a linear SVM on the token count vector;
* ``mlp``: a one-hidden-layer perceptron on the token count vector.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from clickpredict import artifacts
from clickpredict.artifacts import FormatError
from clickpredict.baselines import LinearModel, MlpConfig, MlpParams, SvmConfig, linear_svm_train, mlp_train
from clickpredict.features import count_vector, length_feature
from clickpredict.lstm import LstmParams, TrainConfig, lstm_forward, lstm_train

log = logging.getLogger(__name__)

supported_models = ["lstm", "svm_l", "svm_c", "mlp"]
"""Model kinds understood by :func:`train_classifier`."""

THRESHOLD_PROBABILITY = 0.5
THRESHOLD_MARGIN = 0.0

TRAINING_LOG_COLUMNS = ["epoch", "mean_loss", "train_acc", "val_acc"]


@dataclass(frozen=True)
class ClassifierConfig:
    """Hyperparameters of every model kind."""
    lstm: TrainConfig = field(default_factory=TrainConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)

    def for_model(self, model_kind):
        if model_kind == "lstm":
            return self.lstm.to_dict()
        if model_kind in ("svm_l", "svm_c"):
            return self.svm.to_dict()
        return self.mlp.to_dict()


@dataclass
class TrainedClassifier:
    """A fitted classifier with its provenance."""
    model_kind: str
    feature_set: str
    vocab_size: int
    model: object
    config: dict
    training_log: List = field(default_factory=list)
    vocab_hash: str = ""

    @property
    def max_seq_len(self):
        return self.config.get("max_seq_len")


def vocab_hash(tokens):
    """sha256 (first 16 hex digits) of a vocabulary's tokens in id order."""
    digest = hashlib.sha256()
    for token in tokens:
        digest.update(str(token).encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()[:16]


def feature_matrix(model_kind, samples, vocab_size):
    """Fixed-width inputs of a baseline model kind, one row per sample."""
    if model_kind == "svm_l":
        return np.vstack([length_feature(s) for s in samples]).astype(np.float64)
    if model_kind in ("svm_c", "mlp"):
        return np.vstack([count_vector(s, vocab_size) for s in samples]).astype(np.float64)
    raise ValueError("model kind {} has no fixed-width features".format(model_kind))


def train_classifier(model_kind, samples, vocab_size, cfg=ClassifierConfig(), validation=None, tokens=()):
    """Train one classifier on labelled samples.

    :param model_kind: One of :attr:`supported_models`.
    :param samples: :class:`~clickpredict.features.SequenceSample` list sharing a feature set.
    :param vocab_size: Token id range of the samples (``K`` for state features).
    :param validation: Optional samples scored per epoch (``lstm`` only).
    :param tokens: Vocabulary tokens in id order, hashed into the model's provenance.
    :rtype: :class:`TrainedClassifier`
    """
    if model_kind not in supported_models:
        raise ValueError("unknown model kind: {}".format(model_kind))
    if not samples:
        raise ValueError("no training samples")
    labels = np.array([s.label for s in samples], dtype=np.int64)
    history = []
    if model_kind == "lstm":
        val = None
        if validation:
            val = ([s.tokens for s in validation], [s.label for s in validation])
        model, history = lstm_train([s.tokens for s in samples], labels, vocab_size, cfg.lstm, validation=val)
    elif model_kind in ("svm_l", "svm_c"):
        kind = "length" if model_kind == "svm_l" else "counts"
        model = linear_svm_train(feature_matrix(model_kind, samples, vocab_size), labels, kind, cfg.svm)
    else:
        model = mlp_train(feature_matrix(model_kind, samples, vocab_size), labels, cfg.mlp)
    config = cfg.for_model(model_kind)
    if model_kind != "lstm":
        config["standardized"] = True
    return TrainedClassifier(model_kind=model_kind, feature_set=samples[0].feature_set, vocab_size=vocab_size,
                             model=model, config=config, training_log=history,
                             vocab_hash=vocab_hash(tokens) if tokens else "")


def scores(classifier, samples):
    """Raw outputs: probabilities for ``lstm``/``mlp``, margins for the SVMs."""
    kind = classifier.model_kind
    if kind == "lstm":
        limit = classifier.max_seq_len
        return np.array([lstm_forward(s.tokens[:limit] if limit else s.tokens, classifier.model) for s in samples])
    X = feature_matrix(kind, samples, classifier.vocab_size)
    if kind == "mlp":
        return classifier.model.predict_proba(X)
    return classifier.model.decision_function(X)


def labels_from_scores(model_kind, values):
    """Threshold outputs: ``p >= 0.5`` or ``margin >= 0`` gives label ``1``."""
    values = np.asarray(values)
    threshold = THRESHOLD_MARGIN if model_kind in ("svm_l", "svm_c") else THRESHOLD_PROBABILITY
    return (values >= threshold).astype(np.int64)


def predict_labels(classifier, samples):
    """Predicted label per sample."""
    if not samples:
        return np.zeros(0, dtype=np.int64)
    return labels_from_scores(classifier.model_kind, scores(classifier, samples))


def predict_label(classifier, sample):
    return int(predict_labels(classifier, [sample])[0])


def classifier_to_document(classifier):
    return {
        "format_version": artifacts.FORMAT_VERSIONS["classifier"],
        "model_kind": classifier.model_kind,
        "feature_set": classifier.feature_set,
        "vocab_size": classifier.vocab_size,
        "vocab_hash": classifier.vocab_hash,
        "config": classifier.config,
        "model": classifier.model.to_document(),
    }


def classifier_from_document(document):
    try:
        kind = document["model_kind"]
        if document.get("format_version") != artifacts.FORMAT_VERSIONS["classifier"]:
            raise FormatError("unsupported classifier format version: {}".format(document.get("format_version")))
        if kind == "lstm":
            model = LstmParams.from_document(document["model"])
        elif kind in ("svm_l", "svm_c"):
            model = LinearModel.from_document(document["model"])
        elif kind == "mlp":
            model = MlpParams.from_document(document["model"])
        else:
            raise FormatError("unknown model kind in classifier file: {}".format(kind))
        return TrainedClassifier(model_kind=kind, feature_set=document["feature_set"],
                                 vocab_size=int(document["vocab_size"]), model=model, config=document["config"],
                                 vocab_hash=document.get("vocab_hash", ""))
    except (KeyError, TypeError) as e:
        raise FormatError("malformed classifier document: {}".format(e))


def save_classifier(classifier, dest):
    artifacts.write_json(dest, classifier_to_document(classifier))


def load_classifier(path):
    return classifier_from_document(artifacts.read_json(path))


def training_log_frame(history):
    """Training log table ``epoch,mean_loss,train_acc,val_acc`` (``val_acc`` empty when not scored)."""
    rows = [(r.epoch, r.mean_loss, r.train_acc, r.val_acc) for r in history]
    return pd.DataFrame(rows, columns=TRAINING_LOG_COLUMNS)
