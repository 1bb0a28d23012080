"""Two-sample Student t-test over repeated-run accuracies."""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import betainc

log = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.05

SIGNIFICANCE_COLUMNS = ["config_a", "config_b", "t", "df", "p", "significant@0.05"]


@dataclass(frozen=True)
class SignificanceResult:
    mean_a: float
    mean_b: float
    t_statistic: float
    degrees_of_freedom: int
    p_value: float

    @property
    def significant(self):
        return self.p_value <= SIGNIFICANCE_LEVEL


def students_t_test(sample_a, sample_b):
    """Two-tailed, equal-variance two-sample t-test.

    The p-value is ``I_{df/(df+t^2)}(df/2, 1/2)`` (regularized incomplete beta).
    With zero pooled variance the test degenerates: ``p = 1`` when the means
    agree and ``p = 0`` otherwise (``t`` is then ``0`` or ``+-inf``).

    :param sample_a: At least two observations.
    :param sample_b: At least two observations.
    :rtype: :class:`SignificanceResult`
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("t-test needs at least 2 observations per sample, got {} and {}".format(a.size, b.size))
    mean_a, mean_b = float(a.mean()), float(b.mean())
    df = a.size + b.size - 2
    pooled = (((a - mean_a) ** 2).sum() + ((b - mean_b) ** 2).sum()) / df
    diff = mean_a - mean_b
    if pooled == 0.0:
        if diff == 0.0:
            return SignificanceResult(mean_a, mean_b, 0.0, df, 1.0)
        return SignificanceResult(mean_a, mean_b, float(np.copysign(np.inf, diff)), df, 0.0)
    t = diff / np.sqrt(pooled * (1.0 / a.size + 1.0 / b.size))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return SignificanceResult(mean_a, mean_b, float(t), df, min(max(p, 0.0), 1.0))


def compare_to_weakest(accuracies):
    """Test every configuration against the one with the lowest mean accuracy.

    :param accuracies: ``config name -> per-repeat accuracies``.
    :return: ``(config, weakest, SignificanceResult)`` triples, weakest excluded,
      in the input order.
    """
    if len(accuracies) < 2:
        return []
    weakest = min(accuracies, key=lambda name: (float(np.mean(accuracies[name])), name))
    results = []
    for name, values in accuracies.items():
        if name == weakest:
            continue
        result = students_t_test(values, accuracies[weakest])
        log.debug("%s vs %s: t=%.4f p=%.4g", name, weakest, result.t_statistic, result.p_value)
        results.append((name, weakest, result))
    return results


def significance_frame(comparisons):
    """Significance table ``config_a,config_b,t,df,p,significant@0.05``."""
    rows = [(a, b, r.t_statistic, r.degrees_of_freedom, r.p_value, r.significant) for a, b, r in comparisons]
    return pd.DataFrame(rows, columns=SIGNIFICANCE_COLUMNS)
