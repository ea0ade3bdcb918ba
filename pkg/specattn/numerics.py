'''
Single-query attention kernels shared by the model, the selectors and
the audits. All arrays are float64.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

import math

import numpy as np
import scipy.special

from .exceptions import NumericsError


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'softmax',
    'dense_attention',
    'sparse_attention_postmask',
    'masked_error_bound',
]


# ###############################################
# Lib
# ###############################################


def _as_vector(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise NumericsError(name + ' must be one-dimensional, got shape ' +
                            str(arr.shape))
    return arr


def _as_mask(mask, length):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1 or mask.shape[0] != length:
        raise NumericsError('Mask length ' + str(mask.shape) + ' does not ' +
                            'match KV length ' + str(length))
    return mask


def _check_qkv(q, k, v):
    ''' Coerce q to 1 x d and check k, v against it. Returns the three
    arrays.
    '''
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)

    if q.ndim == 1:
        q = q[np.newaxis, :]

    if q.ndim != 2 or q.shape[0] != 1:
        raise NumericsError('Query must be 1 x d, got ' + str(q.shape))
    if k.ndim != 2 or v.ndim != 2:
        raise NumericsError('Keys and values must be two-dimensional.')
    if q.shape[1] == 0:
        raise NumericsError('Head dimension must be positive.')
    if k.shape[1] != q.shape[1]:
        raise NumericsError('Key width ' + str(k.shape[1]) + ' does not ' +
                            'match query width ' + str(q.shape[1]))
    if k.shape[0] == 0:
        raise NumericsError('Attention over an empty KV history.')
    if k.shape[0] != v.shape[0]:
        raise NumericsError('Key and value lengths differ: ' +
                            str(k.shape[0]) + ' vs ' + str(v.shape[0]))
    if not (np.isfinite(q).all() and np.isfinite(k).all() and
            np.isfinite(v).all()):
        raise NumericsError('non-finite input')

    return q, k, v


def softmax(logits):
    ''' Numerically stable softmax of a single row of logits.
    '''
    logits = _as_vector(logits, 'logits')
    if logits.shape[0] == 0:
        raise NumericsError('empty logits')
    if not np.isfinite(logits).all():
        raise NumericsError('non-finite input')

    # scipy subtracts the row max before exponentiating
    return scipy.special.softmax(logits)


def _scores(q, k):
    return (k @ q[0]) / math.sqrt(q.shape[1])


def dense_attention(q, k, v):
    ''' Returns (out, w): the 1 x d attention output and the attention
    weights over all L keys.
    '''
    q, k, v = _check_qkv(q, k, v)
    w = softmax(_scores(q, k))
    out = (w @ v)[np.newaxis, :]
    return out, w


def _masked_attention(q, k, v, mask, renormalize):
    ''' Returns (out, w). w is the distribution the query actually used:
    the full softmax row when masking after the softmax, or the softmax
    over the selected positions (zero elsewhere) when renormalizing.
    '''
    q, k, v = _check_qkv(q, k, v)
    mask = _as_mask(mask, k.shape[0])

    # A full mask is exactly dense attention, operation for operation.
    if mask.all():
        return dense_attention(q, k, v)

    scores = _scores(q, k)

    if renormalize:
        if not mask.any():
            raise NumericsError('empty attention support')
        selected = softmax(scores[mask])
        w = np.zeros(scores.shape[0])
        w[mask] = selected
        out = (selected @ v[mask])[np.newaxis, :]

    else:
        w = softmax(scores)
        out = ((w * mask) @ v)[np.newaxis, :]

    return out, w


def sparse_attention_postmask(q, k, v, mask, renormalize=False):
    ''' Attention restricted to the positions selected by mask.

    With renormalize=False the full softmax weights are masked and the
    dropped mass is not redistributed; an all-false mask yields zeros.
    With renormalize=True the softmax runs over the selected positions
    only, and an all-false mask is an error.
    '''
    out, __ = _masked_attention(q, k, v, mask, renormalize)
    return out


def masked_error_bound(w, mask, v):
    ''' Sum over dropped positions of w[i] * ||v[i]||_2. Bounds the
    distance between dense attention and post-softmax masked attention.
    '''
    w = _as_vector(w, 'weights')
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != w.shape[0]:
        raise NumericsError('Value rows do not match weight length.')
    mask = _as_mask(mask, w.shape[0])

    dropped = ~mask
    if not dropped.any():
        return 0.0

    norms = np.linalg.norm(v[dropped], axis=1)
    return float(w[dropped] @ norms)


def nll_from_logits(logits, target):
    ''' Negative log-likelihood of target under softmax(logits).
    '''
    logits = _as_vector(logits, 'logits')
    return float(scipy.special.logsumexp(logits) - logits[target])


def log_softmax(logits):
    logits = _as_vector(logits, 'logits')
    return logits - scipy.special.logsumexp(logits)
