'''
Offline calibration of the verifier-to-draft layer mapping.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Global dependencies
import csv
import json
import pathlib

import numpy as np
import scipy.stats

# Intra-package dependencies
from .exceptions import MappingError
from .exceptions import CalibrationError

from .model import prefill
from .utils import dump_json
from .utils import fingerprint


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'AttnTrace',
    'LayerMapping',
    'kl_similarity',
    'build_similarity_matrix',
    'monotonic_dtw',
    'calibrate',
]


# DTW moves, in tie-break preference order
DIAGONAL = 0
LEFT = 1
ABOVE = 2


# ###############################################
# Traces and similarity
# ###############################################


class AttnTrace:
    ''' Head-averaged attention rows of one model, per layer, at a set of
    calibration positions.
    '''

    def __init__(self, tag, layers, positions):
        self.tag = tag
        self.layers = [list(rows) for rows in layers]
        self.positions = list(positions)

        for rows in self.layers:
            if len(rows) != len(self.positions):
                raise CalibrationError('Trace layer holds ' +
                                       str(len(rows)) + ' rows for ' +
                                       str(len(self.positions)) +
                                       ' positions')

    @classmethod
    def from_steps(cls, tag, steps, positions):
        ''' Collect the attention rows of the given step indices.
        '''
        positions = list(positions)
        n_layers = len(steps[0].attentions)
        layers = [[steps[t].attentions[layer] for t in positions]
                  for layer in range(n_layers)]
        return cls(tag, layers, positions)

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def n_positions(self):
        return len(self.positions)

    def __repr__(self):
        return ('AttnTrace(' + repr(self.tag) + ', n_layers=' +
                str(self.n_layers) + ', n_positions=' +
                str(self.n_positions) + ')')


def _smooth(a, epsilon):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or not np.isfinite(a).all() or (a < 0).any():
        raise MappingError('Attention rows must be finite, non-negative ' +
                           'vectors.')
    smoothed = a + epsilon
    return smoothed / smoothed.sum()


def kl_similarity(a_v, a_d, epsilon=1e-10):
    ''' Negative KL divergence KL(a_v || a_d) after additive smoothing.
    Never positive; zero for identical inputs.
    '''
    if epsilon <= 0:
        raise MappingError('epsilon must be positive')
    if len(a_v) != len(a_d):
        raise MappingError('Attention rows differ in length: ' +
                           str(len(a_v)) + ' vs ' + str(len(a_d)))

    pv = _smooth(a_v, epsilon)
    pd = _smooth(a_d, epsilon)
    divergence = float(scipy.stats.entropy(pv, pd))
    # Rounding can leave a tiny negative divergence
    return 0.0 - max(divergence, 0.0)


def build_similarity_matrix(draft_trace, verifier_trace, epsilon=1e-10):
    ''' S[i, j]: mean over calibration positions of the similarity of
    verifier layer j to draft layer i.
    '''
    if draft_trace.positions != verifier_trace.positions:
        raise CalibrationError('Draft and verifier traces cover different ' +
                               'calibration positions.')
    if not draft_trace.n_positions:
        raise CalibrationError('Traces hold no calibration positions.')

    m = draft_trace.n_layers
    n = verifier_trace.n_layers
    sums = np.zeros((m, n))

    for t in range(draft_trace.n_positions):
        for i in range(m):
            a_d = draft_trace.layers[i][t]
            for j in range(n):
                a_v = verifier_trace.layers[j][t]
                if len(a_v) != len(a_d):
                    raise CalibrationError(
                        'Traces were taken over different context ' +
                        'lengths at position ' +
                        str(draft_trace.positions[t])
                    )
                sums[i, j] += kl_similarity(a_v, a_d, epsilon)

    return sums / draft_trace.n_positions


def write_similarity_csv(matrix, path):
    ''' One row per draft layer, one column per verifier layer.
    '''
    matrix = np.asarray(matrix)
    with pathlib.Path(path).open('w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['draft_layer'] + ['verifier_' + str(j)
                                           for j in range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            writer.writerow([i] + [repr(float(value)) for value in row])


# ###############################################
# Monotone alignment
# ###############################################


class LayerMapping:
    ''' draft_of[j] is the draft layer whose attention stands in for
    verifier layer j. Non-decreasing in j.
    '''

    def __init__(self, draft_of, total_score, n_draft_layers, models=None,
                 fingerprint=None):
        draft_of = [int(i) for i in draft_of]
        if not draft_of:
            raise MappingError('A mapping needs at least one verifier layer.')
        if n_draft_layers < 1:
            raise MappingError('A mapping needs at least one draft layer.')

        for j, i in enumerate(draft_of):
            if not 0 <= i < n_draft_layers:
                raise MappingError('Verifier layer ' + str(j) + ' maps to ' +
                                   'draft layer ' + str(i) + ', outside [0, ' +
                                   str(n_draft_layers) + ')')
            if j and i < draft_of[j - 1]:
                raise MappingError('Mapping is not monotone at verifier ' +
                                   'layer ' + str(j))

        self.draft_of = draft_of
        self.total_score = float(total_score)
        self.n_draft_layers = int(n_draft_layers)
        self.models = models
        self.fingerprint = fingerprint

    @classmethod
    def identity(cls, n_layers):
        return cls(range(n_layers), 0.0, n_layers)

    @property
    def n_verifier_layers(self):
        return len(self.draft_of)

    def __getitem__(self, verifier_layer):
        return self.draft_of[verifier_layer]

    def __len__(self):
        return len(self.draft_of)

    def __eq__(self, other):
        if not isinstance(other, LayerMapping):
            return NotImplemented
        return (self.draft_of == other.draft_of and
                self.n_draft_layers == other.n_draft_layers)

    __hash__ = None

    def __repr__(self):
        return ('LayerMapping(' + repr(self.draft_of) + ', total_score=' +
                repr(self.total_score) + ')')

    def check_models(self, draft, verifier):
        ''' Raise MappingError unless this mapping fits the two models.
        '''
        if draft.n_layers != self.n_draft_layers:
            raise MappingError('Mapping expects ' + str(self.n_draft_layers) +
                               ' draft layers, draft has ' +
                               str(draft.n_layers))
        if verifier.n_layers != self.n_verifier_layers:
            raise MappingError('Mapping covers ' +
                               str(self.n_verifier_layers) + ' verifier ' +
                               'layers, verifier has ' +
                               str(verifier.n_layers))
        if self.models is not None and \
                self.models != models_fingerprint(draft, verifier):
            raise MappingError('Mapping was calibrated for different ' +
                               'model weights.')

    def to_json(self):
        return {
            'mapping': {str(j): i for j, i in enumerate(self.draft_of)},
            'total_score': self.total_score,
            'n_draft_layers': self.n_draft_layers,
            'n_verifier_layers': self.n_verifier_layers,
            'models': self.models,
            'fingerprint': self.fingerprint,
        }

    @classmethod
    def from_json(cls, data):
        try:
            mapping = data['mapping']
            n_verifier = data['n_verifier_layers']
            if sorted(mapping, key=int) != [str(j) for j in range(n_verifier)]:
                raise MappingError('Mapping does not cover verifier layers ' +
                                   '0..' + str(n_verifier - 1))
            draft_of = [mapping[str(j)] for j in range(n_verifier)]
            return cls(
                draft_of,
                data['total_score'],
                data['n_draft_layers'],
                models = data.get('models'),
                fingerprint = data.get('fingerprint')
            )

        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MappingError):
                raise
            raise MappingError('Malformed mapping document.') from exc

    def save(self, path):
        dump_json(self.to_json(), path)

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(pathlib.Path(path).read_text())
        except ValueError as exc:
            raise MappingError('Mapping file is not JSON: ' +
                               str(path)) from exc
        return cls.from_json(data)


def monotonic_dtw(similarity):
    ''' Best non-decreasing assignment of verifier layers (columns) to
    draft layers (rows) under similarity matrix S, by dynamic
    programming over cost -S.

    Moves into a cell: diagonal (next draft layer), left (repeat the
    draft layer), above (skip one or more draft layers). Ties prefer
    diagonal, then left, then the lowest skipped-to layer. The path ends
    at the first minimum of the last column.
    '''
    S = np.asarray(similarity, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0 or S.shape[1] == 0:
        raise MappingError('Similarity matrix must be non-empty and 2-D.')
    if not np.isfinite(S).all():
        raise MappingError('Similarity matrix must be finite.')

    m, n = S.shape
    cost = -S

    # Row/column 0 is padding: dp[i, j] maps verifier layer j - 1 to draft
    # layer i - 1.
    dp = np.full((m + 1, n + 1), np.inf)
    dp[0, 0] = 0.0
    parent = np.zeros((m + 1, n + 1), dtype=np.int64)
    move = np.zeros((m + 1, n + 1), dtype=np.int64)

    for j in range(1, n + 1):
        previous = dp[:, j - 1]
        # prefix_min[k] = min(previous[:k + 1]), first argmin in prefix_arg
        prefix_min = np.minimum.accumulate(previous)
        prefix_arg = np.zeros(m + 1, dtype=np.int64)
        for k in range(1, m + 1):
            if previous[k] < prefix_min[k - 1]:
                prefix_arg[k] = k
            else:
                prefix_arg[k] = prefix_arg[k - 1]

        for i in range(1, m + 1):
            diagonal = previous[i - 1]
            left = previous[i]
            if i >= 2:
                above = prefix_min[i - 2]
            else:
                above = np.inf

            if diagonal <= left and diagonal <= above:
                best, parent[i, j], move[i, j] = diagonal, i - 1, DIAGONAL
            elif left <= above:
                best, parent[i, j], move[i, j] = left, i, LEFT
            else:
                best, parent[i, j], move[i, j] = (above, prefix_arg[i - 2],
                                                  ABOVE)

            dp[i, j] = best + cost[i - 1, j - 1]

    end = 1 + int(np.argmin(dp[1:, n]))

    draft_of = [0] * n
    i = end
    for j in range(n, 0, -1):
        draft_of[j - 1] = i - 1
        i = parent[i, j]

    total_score = float(sum(S[draft_of[j], j] for j in range(n)))
    logger.debug('DTW mapping ' + repr(draft_of) + ' scores ' +
                 repr(total_score))
    return LayerMapping(draft_of, total_score, m)


# ###############################################
# Calibration
# ###############################################


def models_fingerprint(draft, verifier):
    return fingerprint([draft.checksum(), verifier.checksum()])


def calibrate(draft, verifier, corpus, warmup=8, stride=1, epsilon=1e-10):
    ''' Prefill both models on the corpus, compare their head-averaged
    attention at every stride-th position after warmup, and align the
    layers. Returns (LayerMapping, similarity matrix).
    '''
    tokens = list(corpus)
    limit = min(draft.config.max_seq, verifier.config.max_seq)
    if len(tokens) > limit:
        logger.warning('Calibration corpus truncated from ' +
                       str(len(tokens)) + ' to ' + str(limit) + ' bytes.')
        tokens = tokens[:limit]

    if stride < 1:
        raise CalibrationError('stride must be >= 1')
    positions = list(range(warmup, len(tokens), stride))
    if not positions:
        raise CalibrationError('Corpus of ' + str(len(tokens)) + ' bytes ' +
                               'is too short for a warmup of ' + str(warmup))

    logger.info('Calibrating on ' + str(len(positions)) + ' positions.')
    draft_steps = prefill(draft, tokens, draft.new_cache())
    verifier_steps = prefill(verifier, tokens, verifier.new_cache())

    similarity = build_similarity_matrix(
        AttnTrace.from_steps('draft', draft_steps, positions),
        AttnTrace.from_steps('verifier', verifier_steps, positions),
        epsilon
    )
    mapping = monotonic_dtw(similarity)
    mapping.models = models_fingerprint(draft, verifier)
    logger.info('Layer mapping: ' + repr(mapping.draft_of))
    return mapping, similarity
