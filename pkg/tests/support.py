"""Shared helpers of the test modules."""
import io

import numpy as np

from clickpredict.features import SequenceSample
from clickpredict.ingest import parse_log


def parse_bytes(data, format="csv"):
    """:func:`clickpredict.ingest.parse_log` over an in-memory byte string."""
    return parse_log(io.BytesIO(data), format)


def true_state_samples(course, threshold=0.0):
    """Generating state paths of a synthetic course as labelled ``state``
    samples (label ``1`` iff grade > threshold)."""
    return [SequenceSample(student_id=s.student_id, feature_set="state", tokens=s.states,
                           token_ts=s.session_starts, label=1 if s.grade > threshold else 0,
                           course_start_ts=course.course_start_ts, first_click_ts=s.session_starts[0])
            for s in course.students]


def total_variation(p, q):
    """Largest row-wise total-variation distance between two stochastic arrays."""
    p, q = np.atleast_2d(p), np.atleast_2d(q)
    return float(0.5 * np.abs(p - q).sum(axis=1).max())
