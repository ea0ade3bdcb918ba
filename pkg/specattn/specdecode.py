'''
Speculative decoding with draft-attention-driven sparse verification.

Between rounds, both KV caches hold every emitted token except the
newest, which is the next round's first input.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Global dependencies
import json

# Intra-package dependencies
from .exceptions import SpecAttnException
from .exceptions import GenerationError
from .exceptions import ContextOverflow
from .exceptions import MaskMismatch

from .config import AutoField
from .config import _AutoMapper

from .model import forward_step
from .model import prefill

from .select import DensePolicy
from .select import NucleusPolicy


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'RoundRecord',
    'draft_phase',
    'verify_phase',
    'check_acceptance',
    'generate',
]


# ###############################################
# Telemetry
# ###############################################


class RoundRecord(metaclass=_AutoMapper):
    ''' What one draft/verify round did.

    selected_counts[r][l] is how many KV positions verifier layer l read
    for verify row r; row_lengths[r] is how many dense attention would
    have read.
    '''
    draft_tokens = AutoField(listed=True)
    verifier_tokens = AutoField(listed=True)
    n_accepted = AutoField()
    emitted = AutoField(listed=True)
    selected_counts = AutoField(listed=True)
    row_lengths = AutoField(listed=True)
    cache_length_before = AutoField()
    cache_length_after = AutoField()

    def to_jsonl(self):
        return json.dumps(self.entranscode(), sort_keys=True)

    @classmethod
    def from_json(cls, data):
        record = cls()
        record.detranscode(data)
        return record


# ###############################################
# Phases
# ###############################################


def draft_phase(draft, cache_d, last_token, gamma, capture_heads=False):
    ''' Greedily draft gamma tokens. Feeds last_token and the first
    gamma - 1 drafts, so the draft cache grows by gamma. Returns
    (tokens, steps); steps[s].attentions is the draft's attention while
    producing tokens[s].
    '''
    tokens = []
    steps = []
    token = last_token
    for __ in range(gamma):
        step = forward_step(draft, token, cache_d,
                            capture_heads=capture_heads)
        steps.append(step)
        token = step.token
        tokens.append(token)

    return tokens, steps


def verify_phase(verifier, cache_v, last_token, draft_tokens, masks=None,
                 mask_fn=None, attention_mode='renormalized', audit=None):
    ''' Feed last_token and every draft token through the verifier, one
    row at a time. Row r reads masks[l].row(r) on layer l. Returns
    (verifier_tokens, steps) with gamma + 1 predictions; the verifier
    cache grows by gamma + 1.
    '''
    inputs = [last_token] + list(draft_tokens)
    base = cache_v.length

    if masks is not None:
        if len(masks) != verifier.n_layers:
            raise MaskMismatch('Expected ' + str(verifier.n_layers) +
                               ' layer masks, got ' + str(len(masks)))
        for mask in masks:
            if mask.n_rows < len(inputs) or \
                    mask.n_cols != base + len(inputs):
                raise MaskMismatch('Masks were built for a different cache ' +
                                   'length or lookahead.')

    tokens = []
    steps = []
    for r, token in enumerate(inputs):
        if masks is None:
            row_masks = None
        else:
            row_masks = [mask.row_mask(r, base + r) for mask in masks]

        step = forward_step(
            verifier,
            token,
            cache_v,
            masks = row_masks,
            mask_fn = mask_fn,
            attention_mode = attention_mode,
            audit = audit
        )
        steps.append(step)
        tokens.append(step.token)

    return tokens, steps


def check_acceptance(draft_tokens, verifier_tokens):
    ''' Length of the longest common prefix.
    '''
    n_accepted = 0
    for drafted, verified in zip(draft_tokens, verifier_tokens):
        if drafted != verified:
            break
        n_accepted += 1
    return n_accepted


# ###############################################
# Generation
# ###############################################


def generate(draft, verifier, mapping, prompt, cfg, policy=None,
             audit=None):
    ''' Speculatively decode up to cfg.max_tokens tokens after prompt.
    Returns (output, rounds), output starting with the prompt.

    policy picks the verifier's masks; it defaults to nucleus selection
    with cfg.selection through mapping. An EOS token is emitted and then
    generation stops. Failures raise GenerationError carrying whatever
    was emitted.
    '''
    output = list(prompt)
    rounds = []
    if not output:
        raise GenerationError('Cannot generate from an empty prompt.',
                              output=output, rounds=rounds)
    if cfg.max_tokens <= 0:
        return output, rounds

    if policy is None:
        if mapping is None:
            policy = DensePolicy()
        else:
            policy = NucleusPolicy(cfg.selection, mapping)

    if mapping is not None and policy.needs_traces:
        mapping.check_models(draft, verifier)

    capture_heads = cfg.selection.aggregation != 'mean'
    cache_d = draft.new_cache()
    cache_v = verifier.new_cache()
    generated = 0

    try:
        if len(output) > 1:
            prefill(draft, output[:-1], cache_d)
            prefill(verifier, output[:-1], cache_v)

        while generated < cfg.max_tokens:
            before = len(output) - 1
            # Verification and the draft re-feed each need one slot past gamma
            room = min(cache_v.max_seq, cache_d.max_seq) - before - 1
            gamma = min(cfg.gamma, room)
            if gamma < 1:
                raise ContextOverflow('context overflow')

            drafts, traces = draft_phase(draft, cache_d, output[-1], gamma,
                                         capture_heads)
            masks = policy.build(traces, before, gamma + 1, verifier.n_layers)
            verified, steps = verify_phase(
                verifier,
                cache_v,
                output[-1],
                drafts,
                masks = masks,
                mask_fn = policy.mask_fn,
                attention_mode = cfg.attention_mode,
                audit = audit
            )

            n_accepted = check_acceptance(drafts, verified)
            emitted = []
            stop = False
            for token in drafts[:n_accepted] + [verified[n_accepted]]:
                emitted.append(token)
                generated += 1
                if token == cfg.eos_token or generated >= cfg.max_tokens:
                    stop = True
                    break
            output.extend(emitted)

            frontier = len(output) - 1
            cache_v.rollback(frontier)
            if frontier > cache_d.length:
                # Full acceptance: the last draft was never fed back
                forward_step(draft, drafts[-1], cache_d)
            else:
                cache_d.rollback(frontier)

            rounds.append(RoundRecord(
                draft_tokens = drafts,
                verifier_tokens = verified,
                n_accepted = n_accepted,
                emitted = emitted,
                selected_counts = [list(step.attended) for step in steps],
                row_lengths = [before + r + 1 for r in range(len(steps))],
                cache_length_before = before,
                cache_length_after = frontier
            ))
            logger.debug('Round ' + str(len(rounds)) + ' accepted ' +
                         str(n_accepted) + ' of ' + str(gamma))

            if stop:
                break

    except SpecAttnException as exc:
        raise GenerationError(
            'Generation failed after ' + str(len(rounds)) + ' rounds.',
            output = output,
            rounds = rounds
        ) from exc

    logger.info('Generated ' + str(generated) + ' tokens in ' +
                str(len(rounds)) + ' rounds.')
    return output, rounds
