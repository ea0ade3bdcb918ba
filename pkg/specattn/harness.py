'''
Measurement: KV-read reduction, teacher-forced perplexity under each
masking policy, method comparison reports, and error bound audits.

Everything here runs at toy scale. Full-scale reference figures travel
with the reports as metadata and are never compared against.

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
import math
import pathlib
import collections
import concurrent.futures

import numpy as np

# Intra-package dependencies
from .exceptions import HarnessError

from .config import AutoField
from .config import _AutoMapper

from .numerics import log_softmax
from .numerics import nll_from_logits
from .model import forward_step
from .model import prefill
from .select import DensePolicy
from .select import NucleusPolicy
from .select import TopKPolicy
from .select import StreamingPolicy
from .select import QuestPolicy
from .specdecode import RoundRecord
from .specdecode import check_acceptance
from .specdecode import generate
from .utils import dump_json
from .utils import edit_distance


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'AuditLog',
    'BenchReport',
    'PerplexityTrace',
    'kv_reduction',
    'perplexity',
    'evaluate',
    'compare_methods',
    'bound_audit',
    'run_bound_audit',
    'degradation_sweep',
    'write_reports',
]


TOY_SCALE_BANNER = (
    'toy-scale: byte-level random-weight models; absolute numbers are not ' +
    'comparable to full-scale results'
)

# Perplexity / KV reduction (%) of full-scale long-context runs
REFERENCE_RESULTS = collections.OrderedDict([
    ('full', {'perplexity': 6.435, 'kv_reduction': 0.0}),
    ('specattn(0.95)', {'perplexity': 7.419, 'kv_reduction': 78.4}),
    ('specattn(0.97)', {'perplexity': 6.720, 'kv_reduction': 68.8}),
    ('specattn(0.99)', {'perplexity': 6.471, 'kv_reduction': 44.3}),
    ('streaming', {'perplexity': 186.242, 'kv_reduction': 77.4}),
    ('quest', {'perplexity': 7.823, 'kv_reduction': 77.4}),
])

REPORT_COLUMNS = [
    'method',
    'perplexity',
    'perplexity_delta',
    'relative_increase',
    'kv_reduction',
    'rounds',
    'mean_accepted',
    'mean_kl',
]


# ###############################################
# Records
# ###############################################


class BenchReport(metaclass=_AutoMapper):
    ''' One row of a method comparison.
    '''
    method = AutoField()
    perplexity = AutoField()
    perplexity_delta = AutoField()
    relative_increase = AutoField()
    kv_reduction = AutoField()
    rounds = AutoField()
    mean_accepted = AutoField()
    mean_kl = AutoField()


class PerplexityTrace:
    ''' Cumulative negative log-likelihood and perplexity after each
    scored token.
    '''

    def __init__(self):
        self.cum_nll = []
        self.cum_ppl = []

    def append(self, nll):
        total = nll + (self.cum_nll[-1] if self.cum_nll else 0.0)
        self.cum_nll.append(total)
        self.cum_ppl.append(math.exp(total / len(self.cum_nll)))

    def __len__(self):
        return len(self.cum_nll)

    @property
    def perplexity(self):
        if not self.cum_ppl:
            raise HarnessError('Empty perplexity trace.')
        return self.cum_ppl[-1]

    def rows(self):
        for step, (nll, ppl) in enumerate(zip(self.cum_nll, self.cum_ppl),
                                          start=1):
            yield step, nll, ppl


class Evaluation:
    ''' Result of one teacher-forced pass.
    '''

    def __init__(self, tag, trace, rounds, logprobs):
        self.tag = tag
        self.trace = trace
        self.rounds = rounds
        self.logprobs = logprobs

    @property
    def perplexity(self):
        return self.trace.perplexity


class AuditLog:
    ''' Receives, for every masked head of every step, the distance
    between dense and masked attention output and its error bound.
    Owned by one generation session.
    '''
    Entry = collections.namedtuple(
        'Entry',
        ['layer', 'head', 'position', 'error', 'bound', 'dropped_mass']
    )

    def __init__(self, slack=1e-9):
        self.slack = slack
        self.entries = []

    def record(self, layer, head, position, error, bound, dropped_mass):
        self.entries.append(
            self.Entry(layer, head, position, error, bound, dropped_mass)
        )

    @property
    def violations(self):
        return [entry for entry in self.entries
                if entry.error > entry.bound + self.slack]

    @property
    def layer_steps(self):
        return len({(entry.layer, entry.position) for entry in self.entries})

    def __len__(self):
        return len(self.entries)


# ###############################################
# KV reduction
# ###############################################


def kv_reduction(rounds, layer_count, dense_prefix_layers):
    ''' Percentage of KV reads avoided relative to dense attention,
    summed over every verifier step and layer of every round. Leading
    dense_prefix_layers layers always count as fully read.
    '''
    rounds = list(rounds)
    if not rounds:
        raise HarnessError('No telemetry to measure.')

    attended = 0
    total = 0
    for record in rounds:
        for counts, length in zip(record.selected_counts,
                                  record.row_lengths):
            if len(counts) != layer_count:
                raise HarnessError('Round telemetry covers ' +
                                   str(len(counts)) + ' layers, expected ' +
                                   str(layer_count))
            for layer, count in enumerate(counts):
                attended += length if layer < dense_prefix_layers else count
                total += length

    if not total:
        raise HarnessError('Telemetry holds no verifier steps.')

    return 100.0 * (1.0 - attended / total)


def _cached_selection(rounds, dense_prefix_layers):
    ''' Mean count of previously cached positions that sparse layers
    read per verify row.
    '''
    counts = []
    for record in rounds:
        for r, row in enumerate(record.selected_counts):
            for layer, count in enumerate(row):
                if layer >= dense_prefix_layers:
                    counts.append(count - (r + 1))
    if not counts:
        return None
    return float(np.mean(counts))


# ###############################################
# Perplexity
# ###############################################


def _split(corpus, prefill_fraction, max_seq):
    tokens = list(corpus)
    if len(tokens) > max_seq:
        raise HarnessError('Corpus of ' + str(len(tokens)) + ' bytes ' +
                           'exceeds max_seq ' + str(max_seq))

    n_prefill = max(1, int(len(tokens) * prefill_fraction))
    if len(tokens) - n_prefill < 1:
        raise HarnessError('Corpus of ' + str(len(tokens)) + ' bytes ' +
                           'leaves nothing to evaluate.')
    return tokens, n_prefill


def draft_trace_steps(draft, corpus, capture_heads=False):
    ''' Teacher-forced draft steps over the whole corpus but its last
    byte; step q is the draft's attention at position q.
    '''
    tokens = list(corpus)
    if len(tokens) < 2:
        raise HarnessError('Corpus too short for draft traces.')
    return prefill(draft, tokens[:-1], draft.new_cache(),
                   capture_heads=capture_heads)


def evaluate(verifier, corpus, prefill_fraction=0.1, policy=None,
             draft_steps=None, gamma=4, attention_mode='renormalized'):
    ''' Teacher-forced evaluation of the verifier on the decode region
    of corpus. The region is walked in windows of gamma query positions;
    each window's masks come from policy (and the draft's attention at
    those positions) and it yields one RoundRecord.
    '''
    if policy is None:
        policy = DensePolicy()
    if gamma < 1:
        raise HarnessError('gamma must be >= 1')

    tokens, n_prefill = _split(corpus, prefill_fraction,
                               verifier.config.max_seq)
    if policy.needs_traces and draft_steps is None:
        raise HarnessError(repr(policy) + ' needs draft traces.')

    cache = verifier.new_cache()
    first = n_prefill - 1
    if first:
        prefill(verifier, tokens[:first], cache)

    trace = PerplexityTrace()
    rounds = []
    logprobs = []
    last = len(tokens) - 1

    for start in range(first, last, gamma):
        queries = list(range(start, min(start + gamma, last)))
        if policy.needs_traces:
            traces = [draft_steps[q] for q in queries]
            drafted = [step.token for step in traces]
        else:
            traces = None
            drafted = []

        masks = policy.build(traces, start, len(queries), verifier.n_layers)

        verified = []
        counts = []
        for r, q in enumerate(queries):
            if masks is None:
                row_masks = None
            else:
                row_masks = [mask.row_mask(r, start + r) for mask in masks]

            step = forward_step(
                verifier,
                tokens[q],
                cache,
                masks = row_masks,
                mask_fn = policy.mask_fn,
                attention_mode = attention_mode
            )
            logprobs.append(log_softmax(step.logits))
            trace.append(nll_from_logits(step.logits, tokens[q + 1]))
            verified.append(step.token)
            counts.append(list(step.attended))

        rounds.append(RoundRecord(
            draft_tokens = drafted,
            verifier_tokens = verified,
            n_accepted = check_acceptance(drafted, verified),
            emitted = [tokens[q + 1] for q in queries],
            selected_counts = counts,
            row_lengths = [start + r + 1 for r in range(len(queries))],
            cache_length_before = start,
            cache_length_after = start + len(queries)
        ))

    logger.info(str(policy.tag) + ' perplexity ' + repr(trace.perplexity) +
                ' over ' + str(len(trace)) + ' tokens')
    return Evaluation(policy.tag, trace, rounds, np.array(logprobs))


def perplexity(verifier, corpus, prefill_fraction=0.1, policy=None,
               draft_steps=None, gamma=4, attention_mode='renormalized'):
    ''' Returns (perplexity, PerplexityTrace) of a teacher-forced pass.
    '''
    result = evaluate(verifier, corpus, prefill_fraction, policy,
                      draft_steps, gamma, attention_mode)
    return result.perplexity, result.trace


def mean_kl(reference, other):
    ''' Mean KL(reference || other) of next-token distributions, from
    log-probability rows.
    '''
    if reference.shape != other.shape:
        raise HarnessError('Evaluations cover different positions.')
    divergence = np.sum(np.exp(reference) * (reference - other), axis=1)
    return float(np.mean(np.maximum(divergence, 0.0)))


# ###############################################
# Method comparison
# ###############################################


def _report(result, full, layer_count, dense_prefix_layers):
    ppl = result.perplexity
    delta = ppl - full.perplexity
    if result is full:
        reduction = 0.0
    else:
        reduction = kv_reduction(result.rounds, layer_count,
                                 dense_prefix_layers)
    return BenchReport(
        method = result.tag,
        perplexity = ppl,
        perplexity_delta = delta,
        relative_increase = 100.0 * delta / full.perplexity,
        kv_reduction = reduction,
        rounds = len(result.rounds),
        mean_accepted = float(np.mean([record.n_accepted
                                       for record in result.rounds])),
        mean_kl = mean_kl(full.logprobs, result.logprobs)
    )


def _matched_budget(results, selection, p_values):
    ''' Cached positions per sparse-layer row read by the nucleus run
    closest to the configured p.
    '''
    closest = min(p_values, key=lambda p: (abs(p - selection.p), p))
    budget = _cached_selection(results[closest].rounds,
                               selection.dense_prefix_layers)
    if budget is None:
        return 1
    return max(1, int(round(budget)))


def compare_methods(draft, verifier, mapping, corpus, spec_cfg, bench_cfg):
    ''' Evaluate full attention, nucleus masks at every configured p, and
    the configured baselines at the density of the nucleus run nearest
    spec_cfg.selection.p. Returns (reports sorted by method, traces by
    method).
    '''
    selection = spec_cfg.selection
    tokens = list(corpus)
    if bench_cfg.corpus_bytes is not None:
        tokens = tokens[:bench_cfg.corpus_bytes]

    mapping.check_models(draft, verifier)
    draft_steps = draft_trace_steps(
        draft, tokens, capture_heads=selection.aggregation != 'mean'
    )

    def run(policy):
        return evaluate(
            verifier,
            tokens,
            prefill_fraction = bench_cfg.prefill_fraction,
            policy = policy,
            draft_steps = draft_steps,
            gamma = spec_cfg.gamma,
            attention_mode = spec_cfg.attention_mode
        )

    p_values = sorted(set(bench_cfg.p_values))
    with concurrent.futures.ThreadPoolExecutor(
        max_workers = bench_cfg.workers
    ) as executor:
        full_future = executor.submit(run, DensePolicy())
        nucleus_futures = collections.OrderedDict()
        for p in p_values:
            cfg = selection.copy()
            cfg.p = p
            nucleus_futures[p] = executor.submit(
                run, NucleusPolicy(cfg, mapping)
            )

        full = full_future.result()
        nucleus = collections.OrderedDict(
            (p, future.result()) for p, future in nucleus_futures.items()
        )

        if bench_cfg.budget is None:
            budget = _matched_budget(nucleus, selection, p_values)
            logger.info('Baseline budget matched to ' + str(budget) +
                        ' cached positions.')
        else:
            budget = bench_cfg.budget

        baselines = []
        for name in bench_cfg.baselines:
            if name == 'topk':
                policy = TopKPolicy(
                    budget,
                    mapping,
                    dense_prefix_layers = selection.dense_prefix_layers,
                    block_size = selection.block_size,
                    aggregation = selection.aggregation
                )
            elif name == 'streaming':
                n_recent = bench_cfg.n_recent
                if n_recent is None:
                    n_recent = max(1, budget - bench_cfg.n_sink)
                policy = StreamingPolicy(
                    bench_cfg.n_sink,
                    n_recent,
                    dense_prefix_layers = selection.dense_prefix_layers
                )
            elif name == 'quest':
                policy = QuestPolicy(
                    budget,
                    bench_cfg.page_size,
                    dense_prefix_layers = selection.dense_prefix_layers
                )
            else:
                raise HarnessError('Unknown baseline: ' + repr(name))
            baselines.append(executor.submit(run, policy))

        others = list(nucleus.values()) + [future.result()
                                           for future in baselines]

    results = [full] + others
    reports = [
        _report(result, full, verifier.n_layers,
                selection.dense_prefix_layers)
        for result in results
    ]
    reports.sort(key=lambda report: report.method)
    traces = collections.OrderedDict(
        (result.tag, result.trace)
        for result in sorted(results, key=lambda result: result.tag)
    )
    return reports, traces


def write_reports(reports, traces, out_dir, fingerprint=None):
    ''' report.csv, report.json and ppl_trace.csv under out_dir.
    '''
    out_dir = pathlib.Path(out_dir)

    with (out_dir / 'report.csv').open('w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            row = []
            for column in REPORT_COLUMNS:
                value = getattr(report, column)
                if isinstance(value, float):
                    value = repr(value)
                row.append(value)
            writer.writerow(row)

    dump_json(
        {
            'banner': TOY_SCALE_BANNER,
            'fingerprint': fingerprint,
            'reference': REFERENCE_RESULTS,
            'rows': [report.entranscode() for report in reports],
        },
        out_dir / 'report.json'
    )

    with (out_dir / 'ppl_trace.csv').open('w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['method', 'step', 'cum_nll', 'cum_ppl'])
        for tag, trace in traces.items():
            for step, nll, ppl in trace.rows():
                writer.writerow([tag, step, repr(nll), repr(ppl)])


# ###############################################
# Audits and sweeps
# ###############################################


def bound_audit(log):
    ''' Number of recorded layer-head-steps whose dense-vs-masked output
    distance exceeds the error bound.
    '''
    violations = log.violations
    for entry in violations[:10]:
        logger.error('Bound violation: ' + repr(entry))
    return len(violations)


def run_bound_audit(draft, verifier, mapping, prompt, spec_cfg, p=None,
                    slack=1e-9):
    ''' Generate with post-softmax masking, auditing every masked head.
    Returns the AuditLog.
    '''
    cfg = spec_cfg.copy()
    cfg.attention_mode = 'eq2'
    if p is not None:
        cfg.selection.p = p

    log = AuditLog(slack)
    generate(draft, verifier, mapping, prompt, cfg, audit=log)
    logger.info('Audited ' + str(len(log)) + ' masked head-steps.')
    return log


def degradation_sweep(draft, verifier, mapping, prompts, spec_cfg,
                      p_values):
    ''' For each p, the mean over prompts of the edit distance between
    sparse-verified and dense-verified continuations, per sparse round.
    '''
    prompts = [list(prompt) for prompt in prompts]
    if not prompts:
        raise HarnessError('No prompts to sweep.')

    dense = []
    for prompt in prompts:
        output, __ = generate(draft, verifier, mapping, prompt, spec_cfg,
                              policy=DensePolicy())
        dense.append(output[len(prompt):])

    sweep = collections.OrderedDict()
    for p in sorted(p_values):
        cfg = spec_cfg.copy()
        cfg.selection.p = p
        distances = []
        for prompt, reference in zip(prompts, dense):
            output, rounds = generate(draft, verifier, mapping, prompt, cfg)
            distance = edit_distance(output[len(prompt):], reference)
            distances.append(distance / max(len(rounds), 1))
        sweep[p] = float(np.mean(distances))
        logger.info('p=' + repr(p) + ' mean edit distance per round ' +
                    repr(sweep[p]))

    return sweep
