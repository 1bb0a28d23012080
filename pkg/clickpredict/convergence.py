"""Stop strategies for iterative fitting (EM and gradient training).

An iterative fit keeps a history of its objective values, one per completed
iteration, and asks a :class:`StopStrategy` after every iteration whether to
keep going. Strategies can be combined with :class:`CompositeStopStrategy`.
"""
import abc
import logging
import math

log = logging.getLogger(__name__)


class DivergenceError(Exception):
    """Raised when an iterative fit produces a non-finite objective."""
    pass


class StopStrategy(abc.ABC):
    """Determines for how long an iterative fit should keep iterating."""

    @abc.abstractmethod
    def should_continue(self, iteration, history):
        """Called after a completed iteration to determine if we should keep iterating.

        :param iteration: Number of iterations completed thus far (1-based).
        :type iteration: int
        :param history: Objective values recorded so far, oldest first.
        :type history: list of float

        :return: `True` if the fit should keep going, `False` otherwise.
        :rtype: bool
        """
        pass


class MaxIterationsStopStrategy(StopStrategy):
    """A :class:`StopStrategy` that stops after a fixed number of iterations."""

    def __init__(self, max_iterations):
        if max_iterations < 1:
            raise ValueError("max_iterations must be >= 1, got {}".format(max_iterations))
        self.max_iterations = max_iterations

    def should_continue(self, iteration, history):
        return iteration < self.max_iterations


class RelativeToleranceStopStrategy(StopStrategy):
    """A :class:`StopStrategy` that stops once the relative change of the
    objective between the two latest iterations, ``|Δ| / |latest|``, drops
    below a tolerance."""

    def __init__(self, tol):
        if not tol > 0:
            raise ValueError("tol must be > 0, got {}".format(tol))
        self.tol = tol

    def should_continue(self, iteration, history):
        if len(history) < 2:
            return True
        latest, previous = history[-1], history[-2]
        if latest == previous:
            return False
        scale = abs(latest)
        if scale == 0.0:
            return True
        return abs(latest - previous) / scale >= self.tol


class CompositeStopStrategy(StopStrategy):
    """Stops as soon as any of its member strategies says stop."""

    def __init__(self, *strategies):
        self.strategies = strategies

    def should_continue(self, iteration, history):
        return all(s.should_continue(iteration, history) for s in self.strategies)


def em_stop_strategy(max_iter, tol):
    """The stop strategy used by EM fits: ``max_iter`` or relative tolerance."""
    return CompositeStopStrategy(MaxIterationsStopStrategy(max_iter), RelativeToleranceStopStrategy(tol))


def check_finite(value, what):
    """Raise :class:`DivergenceError` unless ``value`` is a finite number.

    :param what: Human-readable name of the objective, used in the message.
    """
    if not math.isfinite(value):
        log.error("%s diverged: %s", what, value)
        raise DivergenceError("{} is not finite: {}".format(what, value))
    return value
