'''
A byte-level, decoder-only toy transformer with per-layer attention
capture and externally supplied per-layer attention masks.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Global dependencies
import collections
import hashlib
import math
import zlib

import numpy as np
import scipy.special

# Intra-package dependencies
from .exceptions import ModelError
from .exceptions import ContextOverflow
from .exceptions import MaskMismatch
from .exceptions import CacheError
from .exceptions import ConfigError

from .numerics import dense_attention
from .numerics import masked_error_bound
from .numerics import _masked_attention


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'Model',
    'KVCache',
    'StepOutput',
    'init_model',
    'forward_step',
    'prefill',
    'rollback',
    'greedy_decode',
]


RMS_EPS = 1e-6
ATTENTION_MODES = ('renormalized', 'eq2')


# ###############################################
# Weights
# ###############################################


def tensor_specs(config):
    ''' Yields (name, rows, cols, fan_in, gain) for every tensor of a
    model, in manifest order. Norm tensors have gain None and are
    initialized to ones.
    '''
    d = config.d_model
    d_head = config.d_head

    yield 'embed', config.vocab, d, 1, 1.0

    for layer in range(config.n_layers):
        prefix = 'layers.' + str(layer) + '.'
        yield prefix + 'attn_norm', 1, d, None, None

        for head in range(config.n_heads):
            hprefix = prefix + 'heads.' + str(head) + '.'
            yield hprefix + 'wq', d, d_head, d, config.init_scale
            yield hprefix + 'wk', d, d_head, d, config.init_scale
            yield hprefix + 'wv', d, d_head, d, 1.0
            yield hprefix + 'wo', d_head, d, d_head, 1.0

        yield prefix + 'mlp_norm', 1, d, None, None
        yield prefix + 'w1', d, config.d_ff, d, 1.0
        yield prefix + 'w2', config.d_ff, d, config.d_ff, 1.0

    yield 'final_norm', 1, d, None, None
    yield 'unembed', d, config.vocab, d, 1.0


def init_weights(config):
    ''' Scaled uniform initialization, seeded per tensor by (seed, name).
    Tensors that two configs share by name and shape come out identical,
    so a shallower model with the same seed and width is a prefix of a
    deeper one.
    '''
    weights = collections.OrderedDict()
    for name, rows, cols, fan_in, gain in tensor_specs(config):
        if gain is None:
            weights[name] = np.ones((rows, cols))

        else:
            rng = np.random.default_rng(
                [config.seed, zlib.crc32(name.encode('utf-8'))]
            )
            bound = gain / math.sqrt(fan_in)
            weights[name] = rng.uniform(-bound, bound, size=(rows, cols))

    return weights


class Model:
    ''' Immutable weights plus the config they were built for. Safe to
    share between threads; all mutable state lives in KVCache.
    '''

    def __init__(self, config, weights=None):
        try:
            config.validate()
        except ConfigError as exc:
            raise ModelError('Invalid model config.') from exc

        if weights is None:
            weights = init_weights(config)

        self.config = config
        self._weights = collections.OrderedDict()

        for name, rows, cols, __, __ in tensor_specs(config):
            try:
                tensor = np.array(weights[name], dtype=np.float64)
            except KeyError as exc:
                raise ModelError('Missing tensor: ' + name) from exc

            if tensor.shape != (rows, cols):
                raise ModelError('Tensor ' + name + ' has shape ' +
                                 str(tensor.shape) + ', expected ' +
                                 str((rows, cols)))
            if not np.isfinite(tensor).all():
                raise ModelError('Tensor ' + name + ' is not finite.')

            tensor.setflags(write=False)
            self._weights[name] = tensor

        extra = set(weights) - set(self._weights)
        if extra:
            raise ModelError('Unexpected tensors: ' +
                             ', '.join(sorted(extra)))

        self._stack_heads()

        inv_freq = config.rope_base ** (
            -np.arange(0, config.d_head, 2, dtype=np.float64) / config.d_head
        )
        self._inv_freq = inv_freq

    def _stack_heads(self):
        ''' Per-head projections are stored by name; stack them per layer
        for the forward pass.
        '''
        cfg = self.config
        self._wq = []
        self._wk = []
        self._wv = []
        self._wo = []
        for layer in range(cfg.n_layers):
            names = ['layers.' + str(layer) + '.heads.' + str(head) + '.'
                     for head in range(cfg.n_heads)]
            self._wq.append(np.stack([self[n + 'wq'] for n in names]))
            self._wk.append(np.stack([self[n + 'wk'] for n in names]))
            self._wv.append(np.stack([self[n + 'wv'] for n in names]))
            self._wo.append(np.stack([self[n + 'wo'] for n in names]))

    def __getitem__(self, name):
        return self._weights[name]

    def __iter__(self):
        return iter(self._weights)

    @property
    def n_layers(self):
        return self.config.n_layers

    @property
    def manifest(self):
        ''' List of (name, rows, cols) in storage order.
        '''
        return [(name, tensor.shape[0], tensor.shape[1])
                for name, tensor in self._weights.items()]

    def checksum(self):
        ''' sha256 over every tensor's little-endian float64 bytes, in
        manifest order.
        '''
        digest = hashlib.sha256()
        for name, tensor in self._weights.items():
            digest.update(name.encode('utf-8'))
            digest.update(tensor.astype('<f8').tobytes())
        return digest.hexdigest()

    def new_cache(self):
        return KVCache(self.config)

    def rotate(self, x, position):
        ''' Rotary embedding on interleaved pairs of the last axis.
        '''
        angles = position * self._inv_freq
        cos = np.cos(angles)
        sin = np.sin(angles)
        even = x[..., 0::2]
        odd = x[..., 1::2]
        out = np.empty_like(x)
        out[..., 0::2] = even * cos - odd * sin
        out[..., 1::2] = even * sin + odd * cos
        return out

    def __repr__(self):
        return ('Model(n_layers=' + str(self.config.n_layers) +
                ', n_heads=' + str(self.config.n_heads) +
                ', d_model=' + str(self.config.d_model) +
                ', seed=' + str(self.config.seed) + ')')


def init_model(config):
    ''' Build a model with seeded weights.
    '''
    return Model(config)


# ###############################################
# Caches and step outputs
# ###############################################


class KVCache:
    ''' Preallocated per-layer, per-head key/value history. One cache per
    generation session; not safe for concurrent mutation.
    '''

    def __init__(self, config):
        shape = (config.n_layers, config.n_heads, config.max_seq,
                 config.d_head)
        self.keys = np.zeros(shape)
        self.values = np.zeros(shape)
        self.max_seq = config.max_seq
        self.length = 0

    def __len__(self):
        return self.length

    def layer_keys(self, layer, length=None):
        ''' (n_heads, length, d_head) view of one layer's keys.
        '''
        if length is None:
            length = self.length
        return self.keys[layer, :, :length]

    def layer_values(self, layer, length=None):
        if length is None:
            length = self.length
        return self.values[layer, :, :length]

    def rollback(self, new_length):
        ''' Truncate to new_length. Stale entries past the new length are
        overwritten by later appends.
        '''
        if new_length < 0 or new_length > self.length:
            raise CacheError('Cannot roll back a cache of length ' +
                             str(self.length) + ' to ' + str(new_length))
        self.length = new_length


class StepOutput:
    ''' Everything one forward step produces.

    logits:              (vocab,) next-token logits
    attentions:          per layer, the head-averaged attention row over
                         the KV history including the new position
    per_head_attentions: (n_layers, n_heads, L + 1) when captured
    attended:            per layer, KV positions the step read
    queries:             per layer, (n_heads, d_head) rotated queries
    '''
    __slots__ = [
        'position',
        'logits',
        'attentions',
        'per_head_attentions',
        'attended',
        'queries',
    ]

    def __init__(self, position, logits, attentions, attended,
                 per_head_attentions=None, queries=None):
        self.position = position
        self.logits = logits
        self.attentions = attentions
        self.attended = attended
        self.per_head_attentions = per_head_attentions
        self.queries = queries

    @property
    def token(self):
        ''' The greedy next token.
        '''
        return int(np.argmax(self.logits))

    def __repr__(self):
        return ('StepOutput(position=' + str(self.position) + ', token=' +
                str(self.token) + ')')


# ###############################################
# Forward pass
# ###############################################


def _rms_norm(x, weight):
    return x / np.sqrt(np.mean(x * x) + RMS_EPS) * weight[0]


def _silu(x):
    return x * scipy.special.expit(x)


def _check_masks(model, masks, length):
    if masks is None:
        return None

    if len(masks) != model.n_layers:
        raise MaskMismatch('Expected ' + str(model.n_layers) + ' layer ' +
                           'masks, got ' + str(len(masks)))

    checked = []
    for layer, mask in enumerate(masks):
        if mask is None:
            checked.append(None)
            continue

        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 1 or mask.shape[0] != length:
            raise MaskMismatch('Layer ' + str(layer) + ' mask has length ' +
                               str(mask.shape) + ' but the cache holds ' +
                               str(length) + ' positions')
        checked.append(mask)

    return checked


def forward_step(model, token, cache, masks=None, mask_fn=None,
                 attention_mode='renormalized', capture_heads=False,
                 audit=None):
    ''' Feed one token, append its keys and values to the cache, and
    return a StepOutput.

    masks, when given, holds one entry per layer: None for full attention
    or a boolean vector over the positions cached BEFORE this step. The
    new position is always attendable. mask_fn(layer, queries, cache,
    length) may supply a mask for layers without one, after the layer's
    queries are known. audit, when given, receives the dense-vs-masked
    output difference of every masked head (post-softmax masking only).
    '''
    cfg = model.config

    if attention_mode not in ATTENTION_MODES:
        raise ModelError('Unknown attention mode: ' + repr(attention_mode))
    if audit is not None and attention_mode != 'eq2':
        raise ModelError('Bound audits require eq2 attention.')

    token = int(token)
    if not 0 <= token < cfg.vocab:
        raise ModelError('Token ' + str(token) + ' outside vocabulary of ' +
                         str(cfg.vocab))

    length = cache.length
    if length >= cache.max_seq:
        raise ContextOverflow('context overflow')

    masks = _check_masks(model, masks, length)
    renormalize = attention_mode == 'renormalized'
    position = length
    attendable = length + 1

    x = model['embed'][token].copy()
    attentions = []
    attended = []
    queries_out = []
    per_head = None
    if capture_heads:
        per_head = np.zeros((cfg.n_layers, cfg.n_heads, attendable))

    for layer in range(cfg.n_layers):
        prefix = 'layers.' + str(layer) + '.'
        h = _rms_norm(x, model[prefix + 'attn_norm'])

        queries = model.rotate(
            np.einsum('d,hdk->hk', h, model._wq[layer]), position
        )
        keys = model.rotate(
            np.einsum('d,hdk->hk', h, model._wk[layer]), position
        )
        values = np.einsum('d,hdk->hk', h, model._wv[layer])
        cache.keys[layer, :, position] = keys
        cache.values[layer, :, position] = values
        queries_out.append(queries)

        layer_mask = None if masks is None else masks[layer]
        if layer_mask is None and mask_fn is not None:
            layer_mask = mask_fn(layer, queries, cache, length)
            if layer_mask is not None:
                layer_mask = _check_masks(
                    model,
                    [None] * layer + [layer_mask] +
                    [None] * (cfg.n_layers - layer - 1),
                    length
                )[layer]

        if layer_mask is not None:
            full_mask = np.append(layer_mask, True)
        else:
            full_mask = None

        head_keys = cache.layer_keys(layer, attendable)
        head_values = cache.layer_values(layer, attendable)
        mixed = np.zeros(cfg.d_model)
        weights = np.zeros((cfg.n_heads, attendable))

        for head in range(cfg.n_heads):
            k = head_keys[head]
            v = head_values[head]
            if full_mask is None:
                out, w = dense_attention(queries[head], k, v)

            else:
                out, w = _masked_attention(
                    queries[head], k, v, full_mask, renormalize
                )
                if audit is not None:
                    dense_out, dense_w = dense_attention(queries[head], k, v)
                    audit.record(
                        layer = layer,
                        head = head,
                        position = position,
                        error = float(np.linalg.norm(dense_out - out)),
                        bound = masked_error_bound(dense_w, full_mask, v),
                        dropped_mass = float(dense_w[~full_mask].sum())
                    )

            weights[head] = w
            mixed += out[0] @ model._wo[layer][head]

        x = x + mixed
        h = _rms_norm(x, model[prefix + 'mlp_norm'])
        x = x + _silu(h @ model[prefix + 'w1']) @ model[prefix + 'w2']

        attentions.append(weights.mean(axis=0))
        if per_head is not None:
            per_head[layer] = weights
        if full_mask is None:
            attended.append(attendable)
        else:
            attended.append(int(full_mask.sum()))

    logits = _rms_norm(x, model['final_norm']) @ model['unembed']
    cache.length = attendable

    logger.debug('Step at position ' + str(position) + ' attended ' +
                 str(sum(attended)) + ' of ' +
                 str(attendable * cfg.n_layers) + ' KV entries')

    return StepOutput(
        position = position,
        logits = logits,
        attentions = attentions,
        attended = attended,
        per_head_attentions = per_head,
        queries = queries_out
    )


def prefill(model, tokens, cache, **kwargs):
    ''' Repeated forward_step over tokens. Returns every StepOutput.
    '''
    tokens = list(tokens)
    if not tokens:
        raise ModelError('Cannot prefill an empty token sequence.')

    return [forward_step(model, token, cache, **kwargs) for token in tokens]


def rollback(cache, new_length):
    cache.rollback(new_length)


def greedy_decode(model, prompt, max_tokens, eos_token=None):
    ''' Plain argmax decoding with a single model. Returns the prompt
    followed by up to max_tokens new tokens; an EOS token is emitted and
    then decoding stops.
    '''
    output = list(prompt)
    if not output:
        raise ModelError('Cannot decode from an empty prompt.')
    if max_tokens <= 0:
        return output

    cache = model.new_cache()
    step = prefill(model, output, cache)[-1]
    generated = 0

    while True:
        token = step.token
        output.append(token)
        generated += 1

        if generated >= max_tokens or token == eos_token:
            break

        step = forward_step(model, token, cache)

    return output
