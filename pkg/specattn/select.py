'''
Token selection: nucleus (top-p) selection by threshold search, its
sorting oracle, the fixed-budget and window baselines, and the CSR masks
handed to the verifier.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Global dependencies
import numpy as np
import scipy.sparse

# Intra-package dependencies
from .exceptions import SelectionError
from .exceptions import CsrError
from .exceptions import MappingError


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'TokenSet',
    'CsrMask',
    'nucleus_select_sortfree',
    'nucleus_select_oracle',
    'topk_select',
    'streaming_select',
    'quest_select',
    'union_steps',
    'coarsen_to_blocks',
    'aggregate_heads',
    'build_layer_masks',
    'DensePolicy',
    'NucleusPolicy',
    'TopKPolicy',
    'StreamingPolicy',
    'QuestPolicy',
]


# Cap on the convergence stopping mode
MAX_EPSILON_ITERATIONS = 200


# ###############################################
# Token sets and CSR masks
# ###############################################


class TokenSet:
    ''' Sorted, unique positions within a universe of L positions.
    '''
    __slots__ = ['indices', 'universe']

    def __init__(self, indices, universe):
        universe = int(universe)
        indices = np.unique(np.asarray(indices, dtype=np.int64))
        if indices.size and (indices[0] < 0 or indices[-1] >= universe):
            raise SelectionError('Token index outside universe of ' +
                                 str(universe))
        indices.setflags(write=False)
        self.indices = indices
        self.universe = universe

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        return cls(np.flatnonzero(mask), mask.shape[0])

    @classmethod
    def full(cls, universe):
        return cls(np.arange(universe), universe)

    def to_mask(self):
        mask = np.zeros(self.universe, dtype=bool)
        mask[self.indices] = True
        return mask

    def clip(self, length):
        ''' Restrict to positions below length, over a universe of length.
        '''
        return type(self)(self.indices[self.indices < length], length)

    def issubset(self, other):
        return bool(np.isin(self.indices, other.indices).all())

    def __len__(self):
        return int(self.indices.size)

    def __iter__(self):
        return (int(ii) for ii in self.indices)

    def __contains__(self, position):
        ii = np.searchsorted(self.indices, position)
        return bool(ii < self.indices.size and self.indices[ii] == position)

    def __eq__(self, other):
        if not isinstance(other, TokenSet):
            return NotImplemented
        return (self.universe == other.universe and
                np.array_equal(self.indices, other.indices))

    __hash__ = None

    def __repr__(self):
        return ('TokenSet(' + repr(self.indices.tolist()) + ', universe=' +
                str(self.universe) + ')')


class CsrMask:
    ''' Boolean rows over n_cols positions in compressed sparse row form.
    Row r holds the positions listed in
    col_indices[row_offsets[r]:row_offsets[r + 1]], strictly increasing.
    '''

    def __init__(self, row_offsets, col_indices, n_cols):
        row_offsets = np.asarray(row_offsets, dtype=np.int64)
        col_indices = np.asarray(col_indices, dtype=np.int64)
        n_cols = int(n_cols)

        if row_offsets.ndim != 1 or row_offsets.size == 0:
            raise CsrError('row_offsets must be a non-empty vector.')
        if col_indices.ndim != 1:
            raise CsrError('col_indices must be a vector.')
        if row_offsets[0] != 0:
            raise CsrError('row_offsets must start at 0.')
        if (np.diff(row_offsets) < 0).any():
            raise CsrError('row_offsets must be non-decreasing.')
        if row_offsets[-1] != col_indices.size:
            raise CsrError('row_offsets must end at len(col_indices) = ' +
                           str(col_indices.size))
        if col_indices.size:
            if col_indices.min() < 0 or col_indices.max() >= n_cols:
                raise CsrError('Column index out of range for ' +
                               str(n_cols) + ' columns.')

            # Within a row, columns strictly increase; steps across row
            # boundaries are exempt.
            steps = np.diff(col_indices)
            boundaries = row_offsets[1:-1]
            boundaries = boundaries[(boundaries > 0) &
                                    (boundaries < col_indices.size)]
            exempt = np.zeros(steps.size, dtype=bool)
            exempt[boundaries - 1] = True
            if ((steps <= 0) & ~exempt).any():
                raise CsrError('Columns must strictly increase within ' +
                               'each row.')

        row_offsets.setflags(write=False)
        col_indices.setflags(write=False)
        self.row_offsets = row_offsets
        self.col_indices = col_indices
        self.n_cols = n_cols

    @classmethod
    def from_rows(cls, rows, n_cols=None):
        ''' Encode a boolean grid (or a sequence of equal-length boolean
        vectors).
        '''
        rows = np.asarray(rows, dtype=bool)
        if rows.ndim != 2:
            if rows.size == 0:
                rows = rows.reshape(0, n_cols or 0)
            else:
                raise CsrError('Rows must form a two-dimensional grid.')
        if n_cols is not None and rows.shape[1] != n_cols:
            raise CsrError('Row width ' + str(rows.shape[1]) + ' does not ' +
                           'match ' + str(n_cols) + ' columns')
        if rows.shape[0] == 0:
            return cls([0], [], rows.shape[1])

        sparse = scipy.sparse.csr_matrix(rows)
        sparse.sort_indices()
        return cls(sparse.indptr, sparse.indices, rows.shape[1])

    @classmethod
    def from_token_sets(cls, sets, n_cols):
        offsets = [0]
        columns = []
        for tokens in sets:
            columns.append(tokens.indices)
            offsets.append(offsets[-1] + len(tokens))

        if columns:
            columns = np.concatenate(columns)
        else:
            columns = np.zeros(0, dtype=np.int64)

        return cls(offsets, columns, n_cols)

    @property
    def n_rows(self):
        return self.row_offsets.size - 1

    @property
    def nnz(self):
        return int(self.col_indices.size)

    def row(self, r):
        return self.col_indices[self.row_offsets[r]:self.row_offsets[r + 1]]

    def row_counts(self):
        return np.diff(self.row_offsets)

    def row_mask(self, r, length=None):
        ''' Row r as a boolean vector, truncated to length positions.
        '''
        if length is None:
            length = self.n_cols
        mask = np.zeros(self.n_cols, dtype=bool)
        mask[self.row(r)] = True
        return mask[:length]

    def to_rows(self):
        if self.n_rows == 0:
            return np.zeros((0, self.n_cols), dtype=bool)

        sparse = scipy.sparse.csr_matrix(
            (
                np.ones(self.nnz, dtype=bool),
                self.col_indices,
                self.row_offsets
            ),
            shape = (self.n_rows, self.n_cols)
        )
        return sparse.toarray()

    def to_json(self):
        return {
            'row_offsets': self.row_offsets.tolist(),
            'col_indices': self.col_indices.tolist(),
            'n_cols': self.n_cols,
        }

    @classmethod
    def from_json(cls, data):
        try:
            return cls(data['row_offsets'], data['col_indices'],
                       data['n_cols'])
        except (KeyError, TypeError) as exc:
            raise CsrError('Malformed CSR document.') from exc

    def __eq__(self, other):
        if not isinstance(other, CsrMask):
            return NotImplemented
        return (self.n_cols == other.n_cols and
                np.array_equal(self.row_offsets, other.row_offsets) and
                np.array_equal(self.col_indices, other.col_indices))

    __hash__ = None

    def __repr__(self):
        return ('CsrMask(n_rows=' + str(self.n_rows) + ', n_cols=' +
                str(self.n_cols) + ', nnz=' + str(self.nnz) + ')')


# ###############################################
# Selection kernels
# ###############################################


def _as_weights(weights):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise SelectionError('Weights must be one-dimensional.')
    if w.size == 0:
        raise SelectionError('empty weights')
    if not np.isfinite(w).all() or (w < 0).any():
        raise SelectionError('Weights must be finite and non-negative.')
    return w


def _check_p(p):
    if not 0 < p <= 1:
        raise SelectionError('p must lie in (0, 1], got ' + repr(p))


def _mass(w, threshold):
    ''' Mass of every weight at or above threshold. Both selectors use
    this exact summation so that they agree on ties.
    '''
    return float(np.sum(np.where(w >= threshold, w, 0.0)))


def nucleus_select_sortfree(weights, p, iterations=10, epsilon=None):
    ''' Nucleus selection by binary search on a weight threshold.
    Returns (TokenSet, threshold).

    The search keeps mass(lo) >= p * total throughout and returns lo, so
    the selection always carries at least the target mass. epsilon, when
    given, replaces the fixed iteration count with a convergence test on
    the search interval.
    '''
    w = _as_weights(weights)
    _check_p(p)

    total = _mass(w, 0.0)
    if total <= 0:
        raise SelectionError('Weights carry no mass.')

    if p >= 1:
        return TokenSet(np.flatnonzero(w > 0), w.size), 0.0

    target = p * total
    lo = 0.0
    hi = float(w.max())

    if epsilon is None:
        if iterations < 1:
            raise SelectionError('iterations must be >= 1')
        for __ in range(iterations):
            mid = (lo + hi) / 2
            if _mass(w, mid) < target:
                hi = mid
            else:
                lo = mid

    else:
        if epsilon <= 0:
            raise SelectionError('epsilon must be positive')
        rounds = 0
        while hi - lo > epsilon and rounds < MAX_EPSILON_ITERATIONS:
            mid = (lo + hi) / 2
            if _mass(w, mid) < target:
                hi = mid
            else:
                lo = mid
            rounds += 1

    selected = (w >= lo) & (w > 0)
    return TokenSet(np.flatnonzero(selected), w.size), lo


def nucleus_oracle_threshold(weights, p):
    ''' The largest weight value whose tie-closed mass reaches p * total.
    '''
    w = _as_weights(weights)
    _check_p(p)

    total = _mass(w, 0.0)
    if total <= 0:
        raise SelectionError('Weights carry no mass.')

    distinct = np.unique(w[w > 0])[::-1]
    if p >= 1:
        return float(distinct[-1])

    target = p * total

    # The sorted cumulative sum lands on (or next to) the cut; settle it
    # with the same summation the threshold search uses.
    ordered = np.sort(w)[::-1]
    cut = min(int(np.searchsorted(np.cumsum(ordered), target)),
              ordered.size - 1)
    idx = int(np.searchsorted(-distinct, -ordered[cut]))
    idx = min(idx, distinct.size - 1)

    while idx > 0 and _mass(w, distinct[idx - 1]) >= target:
        idx -= 1
    while _mass(w, distinct[idx]) < target:
        idx += 1

    return float(distinct[idx])


def nucleus_select_oracle(weights, p):
    ''' Minimal descending-order prefix reaching p * total, extended to
    every weight tied with the last one taken.
    '''
    w = _as_weights(weights)
    theta = nucleus_oracle_threshold(w, p)
    return TokenSet(np.flatnonzero(w >= theta), w.size)


def topk_select(weights, budget):
    ''' The budget largest weights; lower index wins ties.
    '''
    w = _as_weights(weights)
    if not 1 <= budget <= w.size:
        raise SelectionError('Budget ' + str(budget) + ' outside [1, ' +
                             str(w.size) + ']')
    order = np.argsort(-w, kind='stable')
    return TokenSet(order[:budget], w.size)


def streaming_select(length, n_sink, n_recent):
    ''' Attention sinks plus a recent window.
    '''
    if n_sink < 0 or n_recent < 0 or n_sink + n_recent < 1:
        raise SelectionError('Need at least one sink or recent position.')

    sinks = np.arange(min(n_sink, length))
    recent = np.arange(max(length - n_recent, 0), length)
    return TokenSet(np.concatenate([sinks, recent]), length)


def quest_select(queries, keys, page_size, budget):
    ''' Query-aware page selection under a fixed read budget. Pages of
    page_size positions are scored by an upper bound on any key's logit in
    the page. The most recent page is always read first; the rest of the
    budget goes to the best-scoring pages, the last one cut short, so that
    exactly min(budget, L) positions are read.

    queries: (n_heads, d_head); keys: (n_heads, L, d_head).
    '''
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if page_size < 1 or budget < 1:
        raise SelectionError('page_size and budget must be >= 1')

    length = keys.shape[1]
    if length == 0:
        return TokenSet([], 0)

    starts = np.arange(0, length, page_size)
    kmin = np.minimum.reduceat(keys, starts, axis=1)
    kmax = np.maximum.reduceat(keys, starts, axis=1)
    q = queries[:, np.newaxis, :]
    scores = np.maximum(q * kmin, q * kmax).sum(axis=(0, 2))

    remaining = min(budget, length)
    recent = np.arange(starts[-1], length)[-remaining:]
    chosen = [recent]
    remaining -= recent.size

    for page in np.argsort(-scores, kind='stable'):
        if remaining <= 0:
            break
        if page == starts.size - 1:
            continue
        start = starts[page]
        taken = np.arange(start, min(start + page_size, length))[:remaining]
        chosen.append(taken)
        remaining -= taken.size

    return TokenSet(np.concatenate(chosen), length)


def union_steps(sets):
    ''' Union of per-step selections. Indices are absolute positions, so
    the union lives in the largest universe.
    '''
    sets = list(sets)
    if not sets:
        return TokenSet([], 0)

    universe = max(tokens.universe for tokens in sets)
    indices = np.concatenate([tokens.indices for tokens in sets])
    return TokenSet(indices, universe)


def coarsen_to_blocks(tokens, block_size):
    ''' Select every block of block_size positions that holds a selected
    position.
    '''
    if block_size < 1:
        raise SelectionError('block_size must be >= 1')
    if block_size == 1 or not len(tokens):
        return tokens

    blocks = np.unique(tokens.indices // block_size)
    positions = (blocks[:, np.newaxis] * block_size +
                 np.arange(block_size)).ravel()
    return TokenSet(positions[positions < tokens.universe], tokens.universe)


def aggregate_heads(rows, how='mean'):
    ''' Reduce per-head attention rows (n_heads, L) to the distributions
    selection runs on: the head mean, the renormalized head max, or each
    head on its own (selected separately and then unioned).
    '''
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        return [rows]

    if how == 'mean':
        return [rows.mean(axis=0)]
    elif how == 'max':
        peak = rows.max(axis=0)
        return [peak / peak.sum()]
    elif how == 'union':
        return list(rows)
    else:
        raise SelectionError('Unknown head aggregation: ' + repr(how))


# ###############################################
# Verifier masks
# ###############################################


def _layer_rows(tokens, verifier_length, n_rows):
    ''' Verify row r queries position verifier_length + r. It sees the
    layer selection, every in-round position before it, and itself.
    A tokens of None means full attention.
    '''
    n_cols = verifier_length + n_rows
    sets = []
    for r in range(n_rows):
        own = np.arange(verifier_length, verifier_length + r + 1)
        if tokens is None:
            indices = np.arange(verifier_length + r + 1)
        else:
            indices = np.concatenate([tokens.indices, own])
        sets.append(TokenSet(indices, n_cols))
    return CsrMask.from_token_sets(sets, n_cols)


def _trace_rows(step, layer, aggregation):
    ''' Per-head rows if the step captured them and they are needed,
    otherwise the head-averaged row.
    '''
    if aggregation != 'mean' and step.per_head_attentions is not None:
        return step.per_head_attentions[layer]
    return step.attentions[layer]


def _draft_layer_count(traces):
    return len(traces[0].attentions)


def _check_mapping(mapping, n_draft_layers, n_verifier_layers=None):
    draft_of = list(mapping.draft_of)
    if n_verifier_layers is not None and len(draft_of) != n_verifier_layers:
        raise MappingError('Mapping covers ' + str(len(draft_of)) +
                           ' verifier layers, model has ' +
                           str(n_verifier_layers))
    for j, i in enumerate(draft_of):
        if not 0 <= i < n_draft_layers:
            raise MappingError('Verifier layer ' + str(j) + ' maps to ' +
                               'missing draft layer ' + str(i))
    return draft_of


def build_layer_masks(traces, mapping, cfg, verifier_length, n_rows=1,
                      n_verifier_layers=None):
    ''' One CsrMask per verifier layer, with n_rows verification rows
    each. Leading dense_prefix_layers layers attend fully; every other
    layer j takes the nucleus of its draft layer mapping.draft_of[j] at
    each speculative step, unions them, coarsens to blocks, and clips to
    the verifier's cached positions.
    '''
    traces = list(traces)
    if not traces:
        raise SelectionError('No draft traces to build masks from.')

    draft_of = _check_mapping(mapping, _draft_layer_count(traces),
                              n_verifier_layers)

    if cfg.selector == 'oracle':
        def select(w):
            return nucleus_select_oracle(w, cfg.p)
    else:
        def select(w):
            return nucleus_select_sortfree(
                w, cfg.p, cfg.iterations, cfg.epsilon
            )[0]

    selections = {}
    masks = []
    for j, i in enumerate(draft_of):
        if j < cfg.dense_prefix_layers:
            masks.append(_layer_rows(None, verifier_length, n_rows))
            continue

        if i not in selections:
            per_step = []
            for step in traces:
                for w in aggregate_heads(_trace_rows(step, i, cfg.aggregation),
                                         cfg.aggregation):
                    per_step.append(select(w))
            tokens = coarsen_to_blocks(union_steps(per_step), cfg.block_size)
            selections[i] = tokens.clip(verifier_length)

        masks.append(_layer_rows(selections[i], verifier_length, n_rows))

    return masks


# ###############################################
# Mask policies
# ###############################################


class MaskPolicy:
    ''' Decides which cached positions each verifier layer may read.

    build() returns one CsrMask per verifier layer (or None for full
    attention everywhere). mask_fn is an optional per-step hook for
    policies that need the verifier's own queries.
    '''
    tag = None
    needs_traces = False
    mask_fn = None

    def build(self, traces, verifier_length, n_rows, n_layers):
        raise NotImplementedError()

    def __repr__(self):
        return type(self).__name__ + '(' + repr(self.tag) + ')'


class DensePolicy(MaskPolicy):
    tag = 'full'

    def build(self, traces, verifier_length, n_rows, n_layers):
        return None


class NucleusPolicy(MaskPolicy):
    ''' Draft-attention nucleus masks through a layer mapping.
    '''
    needs_traces = True

    def __init__(self, selection, mapping):
        self.selection = selection
        self.mapping = mapping
        self.tag = 'specattn(' + repr(selection.p) + ')'

    def build(self, traces, verifier_length, n_rows, n_layers):
        return build_layer_masks(
            traces,
            self.mapping,
            self.selection,
            verifier_length,
            n_rows = n_rows,
            n_verifier_layers = n_layers
        )


class TopKPolicy(MaskPolicy):
    ''' Fixed budget of cached positions per layer and round: the budget
    heaviest positions of the mapped draft layer's attention, summed over
    the round's speculative steps (and heads, when not averaged).
    '''
    needs_traces = True

    def __init__(self, budget, mapping, dense_prefix_layers=0, block_size=1,
                 aggregation='mean'):
        if budget < 1:
            raise SelectionError('Top-k budget must be >= 1')
        self.budget = int(budget)
        self.mapping = mapping
        self.dense_prefix_layers = dense_prefix_layers
        self.block_size = block_size
        self.aggregation = aggregation
        self.tag = 'topk(' + str(self.budget) + ')'

    def _select(self, traces, layer, verifier_length):
        if not verifier_length:
            return TokenSet([], 0)

        total = np.zeros(verifier_length)
        for step in traces:
            rows = _trace_rows(step, layer, self.aggregation)
            for w in aggregate_heads(rows, self.aggregation):
                w = w[:verifier_length]
                total[:w.size] += w

        tokens = topk_select(total, min(self.budget, verifier_length))
        return coarsen_to_blocks(tokens, self.block_size)

    def build(self, traces, verifier_length, n_rows, n_layers):
        traces = list(traces)
        if not traces:
            raise SelectionError('No draft traces to build masks from.')
        draft_of = _check_mapping(self.mapping, _draft_layer_count(traces),
                                  n_layers)

        selections = {}
        masks = []
        for j, i in enumerate(draft_of):
            if j < self.dense_prefix_layers:
                masks.append(_layer_rows(None, verifier_length, n_rows))
                continue

            if i not in selections:
                selections[i] = self._select(traces, i, verifier_length)

            masks.append(_layer_rows(selections[i], verifier_length, n_rows))

        return masks


class StreamingPolicy(MaskPolicy):
    ''' Sinks plus a recent window, independent of any draft.
    '''

    def __init__(self, n_sink, n_recent, dense_prefix_layers=0):
        self.n_sink = int(n_sink)
        self.n_recent = int(n_recent)
        self.dense_prefix_layers = dense_prefix_layers
        self.tag = ('streaming(' + str(self.n_sink) + '+' +
                    str(self.n_recent) + ')')

    def build(self, traces, verifier_length, n_rows, n_layers):
        window = streaming_select(verifier_length, self.n_sink, self.n_recent)
        masks = []
        for j in range(n_layers):
            if j < self.dense_prefix_layers:
                masks.append(_layer_rows(None, verifier_length, n_rows))
            else:
                masks.append(_layer_rows(window, verifier_length, n_rows))
        return masks


class QuestPolicy(MaskPolicy):
    ''' Query-aware page selection. Masks come from the verifier's own
    queries at each step, through mask_fn.
    '''

    def __init__(self, budget, page_size, dense_prefix_layers=0):
        if budget < 1 or page_size < 1:
            raise SelectionError('budget and page_size must be >= 1')
        self.budget = int(budget)
        self.page_size = int(page_size)
        self.dense_prefix_layers = dense_prefix_layers
        self.tag = 'quest(' + str(self.budget) + ')'

    def build(self, traces, verifier_length, n_rows, n_layers):
        return None

    def mask_fn(self, layer, queries, cache, length):
        if layer < self.dense_prefix_layers or length == 0:
            return None
        tokens = quest_select(
            queries,
            cache.layer_keys(layer, length),
            self.page_size,
            self.budget
        )
        return tokens.to_mask()
