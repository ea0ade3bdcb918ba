'''
Randomized self-checks of the selection and alignment kernels against
exhaustive references. Driven by the oracle-check command.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Global dependencies
import itertools

import numpy as np

# Intra-package dependencies
from .exceptions import CheckFailure
from .exceptions import ConfigError

from .select import nucleus_select_sortfree
from .select import nucleus_select_oracle
from .select import nucleus_oracle_threshold
from .layermap import monotonic_dtw


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'SuiteResult',
    'random_distribution',
    'nucleus_suite',
    'dtw_suite',
    'run_suites',
]


EXACT_ITERATIONS = 60
MAX_DRAFT_LAYERS = 5
MAX_VERIFIER_LAYERS = 6


class SuiteResult:
    def __init__(self, name):
        self.name = name
        self.trials = 0
        self.skipped = 0
        self.failures = []

    def fail(self, message):
        self.failures.append(message)
        logger.error(self.name + ': ' + message)

    @property
    def passed(self):
        return not self.failures

    def summary(self):
        return (self.name + ': ' + str(self.trials) + ' trials, ' +
                str(len(self.failures)) + ' failures, ' +
                str(self.skipped) + ' exact comparisons skipped')


def random_distribution(rng, length, kind):
    ''' A random attention-like distribution: peaked, flat, or a softmax
    of scaled gaussian logits.
    '''
    if kind == 'peaked':
        w = rng.dirichlet(np.full(length, 0.05))
    elif kind == 'flat':
        w = rng.dirichlet(np.full(length, 20.0))
    else:
        logits = rng.normal(scale=rng.uniform(0.5, 8.0), size=length)
        w = np.exp(logits - logits.max())
        w /= w.sum()

    # Dirichlet draws can underflow to all-zero for tiny alphas
    if not w.sum() > 0:
        w = np.full(length, 1.0 / length)
    return w


def _retained(w, tokens):
    mask = np.zeros(w.size, dtype=bool)
    mask[tokens.indices] = True
    return float(np.sum(np.where(mask, w, 0.0)))


def _separated(w, theta_star):
    ''' True when no weight falls within max(w) / 2**60 below the oracle
    cut, so 60 halvings of the search interval must isolate it.
    '''
    below = w[(w > 0) & (w < theta_star)]
    if not below.size:
        return True
    return bool(theta_star - below.max() > w.max() / 2**EXACT_ITERATIONS)


def nucleus_suite(trials, max_length=4096, seed=0, inject_fault=False):
    ''' Threshold search vs the sorting oracle over random distributions.
    '''
    result = SuiteResult('nucleus')
    rng = np.random.default_rng(seed)
    kinds = ('peaked', 'flat', 'mixed')

    for trial in range(trials):
        result.trials += 1
        length = int(rng.integers(1, max_length + 1))
        w = random_distribution(rng, length, kinds[trial % 3])
        p = float(rng.uniform(0.05, 1.0)) if trial % 10 else 1.0

        total = float(np.sum(np.where(w >= 0.0, w, 0.0)))
        oracle = nucleus_select_oracle(w, p)
        theta_star = nucleus_oracle_threshold(w, p)

        coarse, theta_low = nucleus_select_sortfree(w, p, 10)
        if inject_fault and trial == 0:
            theta_low = np.inf
            coarse = coarse.clip(0)

        if not _retained(w, coarse) >= p * total:
            result.fail('trial ' + str(trial) + ': retained mass below p')
        if not oracle.issubset(coarse):
            result.fail('trial ' + str(trial) + ': 10-iteration selection ' +
                        'misses oracle tokens')
        excess = np.setdiff1d(coarse.indices, oracle.indices)
        if excess.size and not (
                (w[excess] >= theta_low).all() and
                (w[excess] <= theta_star).all()):
            result.fail('trial ' + str(trial) + ': excess tokens outside ' +
                        '[theta_low, theta_star]')

        if _separated(w, theta_star):
            exact, __ = nucleus_select_sortfree(w, p, EXACT_ITERATIONS)
            if exact != oracle:
                result.fail('trial ' + str(trial) + ': ' +
                            str(EXACT_ITERATIONS) + '-iteration selection ' +
                            'differs from oracle')
        else:
            result.skipped += 1

    return result


def best_monotone_score(similarity):
    ''' Exhaustive maximum of sum_j S[f(j), j] over non-decreasing f.
    '''
    m, n = similarity.shape
    best = -np.inf
    for draft_of in itertools.combinations_with_replacement(range(m), n):
        score = float(sum(similarity[draft_of[j], j] for j in range(n)))
        best = max(best, score)
    return best


def dtw_suite(trials, seed=0, inject_fault=False):
    ''' Monotone DTW vs exhaustive enumeration on small matrices.
    '''
    result = SuiteResult('dtw')
    rng = np.random.default_rng(seed)

    for trial in range(trials):
        result.trials += 1
        m = int(rng.integers(1, MAX_DRAFT_LAYERS + 1))
        n = int(rng.integers(1, MAX_VERIFIER_LAYERS + 1))
        similarity = -rng.exponential(size=(m, n))

        mapping = monotonic_dtw(similarity)
        score = mapping.total_score
        if inject_fault and trial == 0:
            score -= 1.0

        if any(b < a for a, b in zip(mapping.draft_of,
                                     mapping.draft_of[1:])):
            result.fail('trial ' + str(trial) + ': mapping not monotone')
        best = best_monotone_score(similarity)
        if abs(score - best) > 1e-12 * max(1.0, abs(best)):
            result.fail('trial ' + str(trial) + ': score ' + repr(score) +
                        ' vs optimum ' + repr(best))

    return result


def run_suites(cfg, inject_fault=False):
    ''' Run both suites from an OracleConfig. Raises CheckFailure if
    anything failed; returns the suite results otherwise.
    '''
    if cfg.nucleus_trials + cfg.dtw_trials <= 0:
        raise ConfigError('no trials')

    results = [
        nucleus_suite(cfg.nucleus_trials, cfg.max_length, cfg.seed,
                      inject_fault),
        dtw_suite(cfg.dtw_trials, cfg.seed, inject_fault),
    ]
    for suite in results:
        logger.info(suite.summary())

    failed = [suite for suite in results if not suite.passed]
    if failed:
        raise CheckFailure('; '.join(suite.summary() for suite in failed))

    return results
