"""Behavior modeling over sessions.

A session is observed through its category-count vector. Two models cluster
sessions into ``K`` behavior states:

* a multinomial mixture model (MMM): sessions are independent draws from a
  mixture of per-state multinomials over click categories;
* a hidden Markov model (HMM): each timestep is one session of a student,
  states follow a first-order Markov chain and emit sessions through the same
  per-state multinomials.

Emission likelihoods omit the multinomial coefficient. It is constant per
observation, so it cancels in EM responsibilities and in every argmax.

All probability rows are kept at or above a smoothing floor ``epsilon``; the
M-steps maximize the expected complete-data log-likelihood *subject to* that
floor, which keeps EM monotone.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import ClassVar, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from clickpredict import artifacts
from clickpredict.artifacts import FormatError
from clickpredict.convergence import check_finite, em_stop_strategy
from clickpredict.ingest import SUPER_GROUPS

log = logging.getLogger(__name__)

MAX_RESTARTS = 3
"""Maximum number of empty-state re-initialisations per fit."""

EMPTY_STATE_MASS = 1e-6
"""A state whose expected mass is below ``EMPTY_STATE_MASS * N`` is empty."""

INIT_CONCENTRATION = 10.0
"""Total Dirichlet concentration of initial emission rows around the global distribution."""

STOCHASTIC_TOLERANCE = 1e-9

MONOTONE_TOLERANCE = 1e-8
"""Largest log-likelihood drop between EM iterations that is put down to rounding."""

TOP_TRANSITIONS = 3


@dataclass(frozen=True)
class FitConfig:
    """Settings of an EM fit.

    :ivar K: Number of states.
    :ivar max_iter: Maximum number of E-steps.
    :ivar tol: Stop once ``|Δll| / |ll| < tol``.
    :ivar seed: Seed of the initialisation.
    :ivar epsilon: Smoothing floor of every probability entry.
    :ivar n_init: Number of seeded initialisations; the best final log-likelihood wins.
    :ivar threads: Worker threads for the HMM E-step (the reduction order is fixed).
    """
    K: int = 10
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0
    epsilon: float = 1e-8
    n_init: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1, got {}".format(self.K))
        if not self.tol > 0:
            raise ValueError("tol must be > 0, got {}".format(self.tol))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0, got {}".format(self.epsilon))
        if self.max_iter < 1 or self.n_init < 1 or self.threads < 1:
            raise ValueError("max_iter, n_init and threads must be >= 1")


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def _check_stochastic(name, matrix):
    matrix = np.atleast_2d(matrix)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("{} has non-finite entries".format(name))
    if np.any(matrix < 0):
        raise ValueError("{} has negative entries".format(name))
    sums = matrix.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > STOCHASTIC_TOLERANCE):
        raise ValueError("{} rows do not sum to 1".format(name))


@dataclass(frozen=True)
class MmmParams:
    """Fitted multinomial mixture: component priors ``pi`` (K) and per-component
    category distributions ``theta`` (K x C)."""
    pi: np.ndarray
    theta: np.ndarray
    category_names: Tuple[str, ...] = ()
    seed: int = 0
    final_loglik: float = float("nan")
    loglik_trace: Tuple[float, ...] = ()
    restarts: Tuple[int, ...] = ()

    kind: ClassVar[str] = "mmm"

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen(self.pi))
        object.__setattr__(self, "theta", _frozen(self.theta))
        if self.pi.ndim != 1 or self.theta.shape[0] != self.pi.shape[0]:
            raise ValueError("inconsistent MMM shapes: pi {}, theta {}".format(self.pi.shape, self.theta.shape))
        _check_stochastic("pi", self.pi)
        _check_stochastic("theta", self.theta)

    @property
    def K(self):
        return self.pi.shape[0]

    @property
    def C(self):
        return self.theta.shape[1]

    @property
    def emissions(self):
        return self.theta


@dataclass(frozen=True)
class HmmParams:
    """Fitted HMM over sessions: initial distribution ``pi`` (K), transition
    matrix ``A`` (K x K) and emission matrix ``B`` (K x C)."""
    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray
    category_names: Tuple[str, ...] = ()
    seed: int = 0
    final_loglik: float = float("nan")
    loglik_trace: Tuple[float, ...] = ()
    restarts: Tuple[int, ...] = ()

    kind: ClassVar[str] = "hmm"

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen(self.pi))
        object.__setattr__(self, "A", _frozen(self.A))
        object.__setattr__(self, "B", _frozen(self.B))
        K = self.pi.shape[0]
        if self.pi.ndim != 1 or self.A.shape != (K, K) or self.B.shape[0] != K:
            raise ValueError("inconsistent HMM shapes: pi {}, A {}, B {}".format(
                self.pi.shape, self.A.shape, self.B.shape))
        _check_stochastic("pi", self.pi)
        _check_stochastic("A", self.A)
        _check_stochastic("B", self.B)

    @property
    def K(self):
        return self.pi.shape[0]

    @property
    def C(self):
        return self.B.shape[1]

    @property
    def emissions(self):
        return self.B


def loglik_deltas(params):
    """Per-iteration log-likelihood changes of a fit, leaving out the steps
    that followed an empty-state re-initialisation."""
    trace = params.loglik_trace
    return [trace[i] - trace[i - 1] for i in range(1, len(trace)) if i not in params.restarts]


def _check_monotone(params):
    drops = [d for d in loglik_deltas(params) if d < -MONOTONE_TOLERANCE]
    if drops:
        log.warning("%s log-likelihood decreased in %d iteration(s), worst by %.3g", params.kind, len(drops),
                    -min(drops))
    return params


def floor_normalize(weights, epsilon):
    """Normalise each row of nonnegative ``weights`` into a distribution whose
    entries are all ``>= epsilon``.

    The result maximises ``sum_c w_c log p_c`` over distributions with
    ``p_c >= epsilon`` (entries are proportional to ``w`` except those clipped
    to the floor). A row of zeros becomes uniform.
    """
    weights = np.asarray(weights, dtype=np.float64)
    squeeze = weights.ndim == 1
    W = np.atleast_2d(weights)
    n = W.shape[1]
    if n * epsilon >= 1.0:
        raise ValueError("epsilon {} too large for {} entries".format(epsilon, n))
    out = np.empty_like(W)
    for r, w in enumerate(W):
        clipped = np.zeros(n, dtype=bool)
        while True:
            free = ~clipped
            budget = 1.0 - epsilon * clipped.sum()
            total = w[free].sum()
            p = np.full(n, epsilon)
            if total > 0:
                p[free] = w[free] * (budget / total)
            else:
                p[free] = budget / free.sum()
            newly = free & (p < epsilon)
            if not newly.any():
                break
            clipped |= newly
        out[r] = p
    return out[0] if squeeze else out


def emission_loglik(counts, row):
    """Multinomial log-likelihood of a session's category counts under one
    emission row, without the multinomial coefficient:
    ``sum_c counts[c] * log(row[c])``.

    :raises ValueError: if ``counts`` is negative somewhere or all zero.
    """
    counts = np.asarray(counts, dtype=np.float64)
    row = np.asarray(row, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("negative counts")
    if not counts.sum() > 0:
        raise ValueError("all-zero counts (empty session)")
    if counts.shape != row.shape:
        raise ValueError("counts and row differ in length: {} vs {}".format(counts.shape, row.shape))
    return float(np.dot(counts, np.log(row)))


def _count_matrix(sessions):
    X = np.asarray([np.asarray(s, dtype=np.float64) for s in sessions], dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("sessions must be count vectors of equal length")
    if np.any(X < 0):
        raise ValueError("negative counts")
    if np.any(X.sum(axis=1) <= 0):
        raise ValueError("all-zero counts (empty session)")
    return X


def _child_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _init_emissions(rng, global_dist, n_rows, epsilon):
    alpha = np.maximum(INIT_CONCENTRATION * global_dist, 1e-3)
    return floor_normalize(rng.dirichlet(alpha, size=n_rows), epsilon)


def _mmm_e_step(X, pi, theta):
    L = X @ np.log(theta).T + np.log(pi)
    row_ll = logsumexp(L, axis=1)
    return float(row_ll.sum()), np.exp(L - row_ll[:, None])


def _mmm_fit_once(X, cfg, rng):
    N, C = X.shape
    K, eps = cfg.K, cfg.epsilon
    global_dist = X.sum(axis=0) / X.sum()
    pi = floor_normalize(rng.dirichlet(np.ones(K)), eps)
    theta = _init_emissions(rng, global_dist, K, eps)

    stop = em_stop_strategy(cfg.max_iter, cfg.tol)
    history, restarts = [], []
    while True:
        ll, R = _mmm_e_step(X, pi, theta)
        history.append(check_finite(ll, "MMM log-likelihood"))
        log.debug("mmm iteration %d: loglik %.6f", len(history), ll)
        if not stop.should_continue(len(history), history):
            break
        mass = R.sum(axis=0)
        pi = floor_normalize(mass, eps)
        theta = floor_normalize(R.T @ X, eps)
        empty = mass < EMPTY_STATE_MASS * N
        if empty.any() and len(restarts) < MAX_RESTARTS:
            log.warning("re-seeding %d empty MMM component(s) after iteration %d", empty.sum(), len(history))
            restarts.append(len(history))
            theta[empty] = _init_emissions(rng, global_dist, int(empty.sum()), eps)
            pi = floor_normalize(pi + empty / K, eps)
    return pi, theta, history, restarts


def mmm_fit(sessions, cfg, category_names=()):
    """Fit a multinomial mixture model to session count vectors with EM.

    :param sessions: Session category-count vectors (length C each).
    :param cfg: Fit settings.
    :type cfg: :class:`FitConfig`
    :param category_names: Optional category names stored with the model.
    :rtype: :class:`MmmParams`
    """
    X = _count_matrix(sessions)
    N, C = X.shape
    if N < cfg.K:
        raise ValueError("need at least K={} sessions, got {}".format(cfg.K, N))
    if C < 2:
        raise ValueError("need at least 2 categories, got {}".format(C))
    best = None
    for attempt, rng in enumerate(_child_rngs(cfg.seed, cfg.n_init)):
        pi, theta, history, restarts = _mmm_fit_once(X, cfg, rng)
        log.info("mmm init %d: %d iteration(s), loglik %.6f", attempt, len(history), history[-1])
        if best is None or history[-1] > best[2][-1]:
            best = (pi, theta, history, restarts)
    pi, theta, history, restarts = best
    return _check_monotone(MmmParams(pi=pi, theta=theta, category_names=tuple(category_names), seed=cfg.seed,
                                     final_loglik=history[-1], loglik_trace=tuple(history),
                                     restarts=tuple(restarts)))


def mmm_assign(counts, params):
    """Most probable mixture component of one session:
    ``argmax_k log pi_k + emission_loglik(counts, theta_k)``, lowest index on ties."""
    counts = np.asarray(counts, dtype=np.float64)
    scores = np.log(params.pi) + np.log(params.theta) @ counts
    return int(np.argmax(scores))


def _log_emissions(X, B):
    return X @ np.log(B).T


def _forward(log_pi, A, E):
    T, K = E.shape
    la = np.empty((T, K))
    la[0] = log_pi + E[0]
    for t in range(1, T):
        m = la[t - 1].max()
        la[t] = m + np.log(np.exp(la[t - 1] - m) @ A) + E[t]
    return la


def _backward(A, E):
    T, K = E.shape
    lb = np.zeros((T, K))
    for t in range(T - 2, -1, -1):
        v = E[t + 1] + lb[t + 1]
        m = v.max()
        lb[t] = m + np.log(A @ np.exp(v - m))
    return lb


def _hmm_e_step_one(X, log_pi, A, log_A, B):
    E = _log_emissions(X, B)
    la = _forward(log_pi, A, E)
    lb = _backward(A, E)
    ll = float(logsumexp(la[-1]))
    gamma = np.exp(la + lb - ll)
    if X.shape[0] > 1:
        v = E[1:] + lb[1:]
        xi = np.exp(la[:-1, :, None] + log_A[None, :, :] + v[:, None, :] - ll).sum(axis=0)
    else:
        xi = np.zeros_like(A)
    return ll, gamma[0], xi, gamma.T @ X, gamma.sum(axis=0)


def _hmm_e_step(sequences, pi, A, B, threads):
    log_pi, log_A = np.log(pi), np.log(A)
    K, C = B.shape

    def one(X):
        return _hmm_e_step_one(X, log_pi, A, log_A, B)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, sequences))
    else:
        parts = [one(X) for X in sequences]

    # reduce in sequence order
    total, pi_w, A_w, B_w, mass = 0.0, np.zeros(K), np.zeros((K, K)), np.zeros((K, C)), np.zeros(K)
    for ll, g0, xi, gx, g in parts:
        total += ll
        pi_w += g0
        A_w += xi
        B_w += gx
        mass += g
    return total, pi_w, A_w, B_w, mass


def _hmm_fit_once(sequences, cfg, rng):
    K, eps = cfg.K, cfg.epsilon
    stacked = np.vstack(sequences)
    N = stacked.shape[0]
    global_dist = stacked.sum(axis=0) / stacked.sum()
    pi = floor_normalize(rng.dirichlet(np.ones(K)), eps)
    A = floor_normalize(rng.dirichlet(np.ones(K), size=K), eps)
    B = _init_emissions(rng, global_dist, K, eps)

    stop = em_stop_strategy(cfg.max_iter, cfg.tol)
    history, restarts = [], []
    while True:
        ll, pi_w, A_w, B_w, mass = _hmm_e_step(sequences, pi, A, B, cfg.threads)
        history.append(check_finite(ll, "HMM log-likelihood"))
        log.debug("hmm iteration %d: loglik %.6f", len(history), ll)
        if not stop.should_continue(len(history), history):
            break
        pi = floor_normalize(pi_w, eps)
        A = floor_normalize(A_w, eps)
        B = floor_normalize(B_w, eps)
        empty = mass < EMPTY_STATE_MASS * N
        if empty.any() and len(restarts) < MAX_RESTARTS:
            log.warning("re-seeding %d empty HMM state(s) after iteration %d", empty.sum(), len(history))
            restarts.append(len(history))
            n_empty = int(empty.sum())
            B[empty] = _init_emissions(rng, global_dist, n_empty, eps)
            A[empty] = floor_normalize(rng.dirichlet(np.ones(K), size=n_empty), eps)
            A = floor_normalize(A + empty[None, :] / K, eps)
            pi = floor_normalize(pi + empty / K, eps)
    return pi, A, B, history, restarts


def hmm_fit(students, cfg, category_names=()):
    """Fit an HMM over students' session sequences with Baum-Welch.
    Forward-backward runs in log space; expected counts are aggregated over
    all students in input order.

    :param students: One sequence per student; each sequence is a list of
      session count vectors (length C).
    :param cfg: Fit settings.
    :type cfg: :class:`FitConfig`
    :rtype: :class:`HmmParams`
    """
    sequences = [_count_matrix(seq) for seq in students]
    if not sequences:
        raise ValueError("no sequences to fit")
    if any(X.shape[0] == 0 for X in sequences):
        raise ValueError("empty sequence")
    C = sequences[0].shape[1]
    if any(X.shape[1] != C for X in sequences):
        raise ValueError("sequences differ in category count")
    if C < 2:
        raise ValueError("need at least 2 categories, got {}".format(C))
    best = None
    for attempt, rng in enumerate(_child_rngs(cfg.seed, cfg.n_init)):
        fitted = _hmm_fit_once(sequences, cfg, rng)
        log.info("hmm init %d: %d iteration(s), loglik %.6f", attempt, len(fitted[3]), fitted[3][-1])
        if best is None or fitted[3][-1] > best[3][-1]:
            best = fitted
    pi, A, B, history, restarts = best
    return _check_monotone(HmmParams(pi=pi, A=A, B=B, category_names=tuple(category_names), seed=cfg.seed,
                                     final_loglik=history[-1], loglik_trace=tuple(history),
                                     restarts=tuple(restarts)))


def hmm_forward_loglik(sequence, params):
    """``log P(sequence | params)`` for one student's session count vectors."""
    X = _count_matrix(sequence)
    E = _log_emissions(X, params.B)
    la = _forward(np.log(params.pi), params.A, E)
    return float(logsumexp(la[-1]))


def hmm_viterbi(sequence, params):
    """Most probable state path of one student's sessions.

    :return: ``(path, log P(path, sequence))``; ties resolve to the lowest
      state index at every step.
    :rtype: tuple of (list of int, float)
    """
    X = _count_matrix(sequence)
    E = _log_emissions(X, params.B)
    log_A = np.log(params.A)
    T, K = E.shape
    delta = np.log(params.pi) + E[0]
    back = np.zeros((T, K), dtype=np.int64)
    columns = np.arange(K)
    for t in range(1, T):
        scores = delta[:, None] + log_A
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], columns] + E[t]
    state = int(np.argmax(delta))
    logprob = float(delta[state])
    path = [state]
    for t in range(T - 1, 0, -1):
        state = int(back[t, state])
        path.append(state)
    path.reverse()
    return path, logprob


def decode_states(sessions, params):
    """Session-state sequence of one student: Viterbi for an HMM, per-session
    :func:`mmm_assign` for an MMM.

    :param sessions: The student's sessions (:class:`clickpredict.ingest.Session`).
    """
    if not sessions:
        return []
    counts = [s.counts for s in sessions]
    if params.C != len(counts[0]):
        raise ValueError("category dimension mismatch: model has {}, sessions have {}".format(
            params.C, len(counts[0])))
    if params.kind == "hmm":
        return hmm_viterbi(counts, params)[0]
    return [mmm_assign(c, params) for c in counts]


def summarize_behaviors(params, category_map):
    """Aggregate each state's emission row into the five super-groups
    (:attr:`clickpredict.ingest.SUPER_GROUPS` order).

    :return: K x 5 array whose rows sum to 1.
    """
    if params.C != category_map.n_categories:
        raise ValueError("category dimension mismatch: model has {}, map has {}".format(
            params.C, category_map.n_categories))
    groups = np.array([SUPER_GROUPS.index(category_map.group_of(c)) for c in range(params.C)])
    table = np.zeros((params.K, len(SUPER_GROUPS)))
    for g in range(len(SUPER_GROUPS)):
        table[:, g] = params.emissions[:, groups == g].sum(axis=1)
    return table


@dataclass(frozen=True)
class TransitionReport:
    """Initial probabilities, the transition table and each state's top outgoing transitions."""
    pi: np.ndarray
    A: np.ndarray
    top: Tuple[Tuple[Tuple[int, float], ...], ...] = field(default=())


def transition_report(params):
    """Initial distribution, transition matrix and top-3 outgoing transitions per state."""
    top = []
    for row in params.A:
        order = np.argsort(-row, kind="stable")[:TOP_TRANSITIONS]
        top.append(tuple((int(j), float(row[j])) for j in order))
    return TransitionReport(pi=np.array(params.pi), A=np.array(params.A), top=tuple(top))


def behaviors_frame(table):
    frame = pd.DataFrame(table, columns=list(SUPER_GROUPS))
    frame.insert(0, "state", range(table.shape[0]))
    return frame


def transitions_frames(report):
    """Render a :class:`TransitionReport` as ``(initial, transitions)`` tables."""
    initial = pd.DataFrame({"state": range(len(report.pi)), "initial_probability": report.pi})
    ranks = {(i, j): r + 1 for i, top in enumerate(report.top) for r, (j, _) in enumerate(top)}
    rows = [(i, j, report.A[i, j], ranks.get((i, j), ""))
            for i in range(report.A.shape[0]) for j in range(report.A.shape[1])]
    transitions = pd.DataFrame(rows, columns=["from_state", "to_state", "probability", "top_rank"])
    return initial, transitions


def model_to_document(params):
    """JSON document of a fitted model, fields in a fixed order."""
    document = {"kind": params.kind, "K": params.K, "C": params.C, "pi": params.pi.tolist()}
    if params.kind == "hmm":
        document["A"] = params.A.tolist()
        document["B"] = params.B.tolist()
    else:
        document["theta"] = params.theta.tolist()
    document["category_names"] = list(params.category_names)
    document["seed"] = params.seed
    document["final_loglik"] = params.final_loglik
    document["loglik_trace"] = list(params.loglik_trace)
    document["restarts"] = list(params.restarts)
    document["format_version"] = artifacts.FORMAT_VERSIONS["behavior_model"]
    return document


def model_from_document(document, kind=None):
    """Inverse of :func:`model_to_document`.

    :param kind: If given, the expected ``kind`` (``"mmm"`` or ``"hmm"``).
    :raises FormatError: on a missing field or a kind mismatch.
    """
    try:
        found = document["kind"]
        if kind is not None and found != kind:
            raise FormatError("expected a {} model, found {}".format(kind, found))
        common = dict(category_names=tuple(document.get("category_names", ())),
                      seed=int(document.get("seed", 0)),
                      final_loglik=float(document.get("final_loglik", math.nan)),
                      loglik_trace=tuple(document.get("loglik_trace", ())),
                      restarts=tuple(document.get("restarts", ())))
        if found == "hmm":
            params = HmmParams(pi=document["pi"], A=document["A"], B=document["B"], **common)
        elif found == "mmm":
            params = MmmParams(pi=document["pi"], theta=document["theta"], **common)
        else:
            raise FormatError("unknown model kind: {}".format(found))
    except KeyError as e:
        raise FormatError("model document lacks field {}".format(e))
    if params.K != document["K"] or params.C != document["C"]:
        raise FormatError("model shape fields disagree with its matrices")
    return params


def save_model(params, dest):
    artifacts.write_json(dest, model_to_document(params))


def load_model(path, kind=None):
    return model_from_document(artifacts.read_json(path), kind=kind)

