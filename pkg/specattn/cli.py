'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

import sys
import json
import pathlib
import argparse
import logging

from specattn import logutils
from specattn.config import Config
from specattn.exceptions import SpecAttnException
from specattn.exceptions import CheckFailure
from specattn.exceptions import ConfigError
from specattn.exceptions import ConfigMissing
from specattn.exceptions import GenerationError
from specattn.utils import _ensure_dir_exists


# ###############################################
# Boilerplate
# ###############################################


logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'main',
]


# Baseline budget for generate when the config leaves it unset
GENERATE_BUDGET = 64


# ###############################################
# Shared plumbing
# ###############################################


def _load_config(args, required=True):
    ''' Load the run config and apply flag overrides.
    '''
    if args.config is not None:
        config = Config.load(args.config)
    else:
        try:
            config = Config.find()
        except ConfigMissing:
            if required:
                raise
            config = Config()

    if args.out_dir is not None:
        config.out_dir = pathlib.Path(args.out_dir).absolute()
    if args.p is not None:
        config.spec.selection.p = args.p
    if args.gamma is not None:
        config.spec.gamma = args.gamma
    if args.seed is not None:
        config.draft.config.seed = args.seed
        config.verifier.config.seed = args.seed
    if args.verbosity is not None:
        config.instrumentation.verbosity = args.verbosity
    if getattr(args, 'prompt', None) is not None:
        config.prompt = pathlib.Path(args.prompt).absolute()

    _configure_logging(config, explicit=args.verbosity)
    return config


def _choose_loglevel(config, explicit=None):
    ''' --verbosity beats $SPECATTN_LOG, which beats the config file.
    '''
    if explicit is not None:
        return explicit
    return logutils.env_loglevel(config.instrumentation.verbosity)


def _configure_logging(config, explicit=None):
    # Only the first command of a process installs handlers
    if logging.getLogger('').handlers:
        return

    logdir = config.resolve(config.instrumentation.logdir)
    logutils.autoconfig(
        tofile = logdir is not None,
        logdirname = str(logdir) if logdir is not None else 'logs',
        loglevel = _choose_loglevel(config, explicit),
        logname = 'specattn'
    )


def _build_model(config, section):
    from specattn.model import init_model
    from specattn.weights import load_weights

    if section.weights is not None:
        return load_weights(config.resolve(section.weights), section.config)
    return init_model(section.config)


def _build_models(config):
    return _build_model(config, config.draft), \
        _build_model(config, config.verifier)


def _load_mapping(out_dir):
    from specattn.layermap import LayerMapping

    path = out_dir / 'mapping.json'
    if not path.exists():
        raise ConfigMissing('No layer mapping at ' + str(path) + '; run ' +
                            '"specattn calibrate" first.')
    return LayerMapping.load(path)


def _read_bytes(path, what):
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise ConfigMissing(what + ' not found: ' + str(path)) from exc
    if not data:
        raise ConfigError('empty ' + what.lower())
    return data


# ###############################################
# Command-specific entry points
# ###############################################


def cmd_calibrate(args):
    ''' Calibrate the layer mapping; writes mapping.json and
    simmatrix.csv.
    '''
    from specattn.layermap import calibrate
    from specattn.layermap import write_similarity_csv

    config = _load_config(args)
    config.validate(require_corpus=True)
    corpus = _read_bytes(config.resolve(config.corpus), 'Corpus')
    draft, verifier = _build_models(config)

    mapping, similarity = calibrate(
        draft,
        verifier,
        corpus,
        warmup = config.calibration.warmup,
        stride = config.calibration.stride,
        epsilon = config.calibration.epsilon
    )
    mapping.fingerprint = config.fingerprint()

    out_dir = config.out_path
    _ensure_dir_exists(out_dir)
    mapping.save(out_dir / 'mapping.json')
    write_similarity_csv(similarity, out_dir / 'simmatrix.csv')

    print('Layer mapping (verifier -> draft): ' + repr(mapping.draft_of))


def _generate_policy(mode, config, mapping):
    from specattn.select import DensePolicy
    from specattn.select import NucleusPolicy
    from specattn.select import StreamingPolicy
    from specattn.select import TopKPolicy

    selection = config.spec.selection
    budget = config.bench.budget or GENERATE_BUDGET

    if mode == 'dense-only':
        return DensePolicy()
    elif mode == 'specattn':
        return NucleusPolicy(selection, mapping)
    elif mode == 'topk':
        return TopKPolicy(
            budget,
            mapping,
            dense_prefix_layers = selection.dense_prefix_layers,
            block_size = selection.block_size,
            aggregation = selection.aggregation
        )
    elif mode == 'streaming':
        n_recent = config.bench.n_recent
        if n_recent is None:
            n_recent = max(1, budget - config.bench.n_sink)
        return StreamingPolicy(
            config.bench.n_sink,
            n_recent,
            dense_prefix_layers = selection.dense_prefix_layers
        )
    else:
        raise ConfigError('Unknown mode: ' + repr(mode))


def _write_generation(out_dir, fingerprint, mode, prompt, output, rounds):
    _ensure_dir_exists(out_dir)
    (out_dir / 'generated.bin').write_bytes(bytes(output[len(prompt):]))

    with (out_dir / 'rounds.jsonl').open('w') as f:
        header = {
            'fingerprint': fingerprint,
            'mode': mode,
            'prompt_length': len(prompt),
        }
        f.write(json.dumps(header, sort_keys=True) + '\n')
        for record in rounds:
            f.write(record.to_jsonl() + '\n')


def cmd_generate(args):
    ''' Speculatively decode from the prompt; writes generated.bin and
    rounds.jsonl.
    '''
    from specattn.specdecode import generate

    config = _load_config(args)
    config.validate(require_prompt=True)
    if config.verifier.config.vocab > 256:
        raise ConfigError('Byte output needs a vocabulary of at most 256.')

    prompt = list(_read_bytes(config.resolve(config.prompt), 'Prompt'))
    draft, verifier = _build_models(config)
    out_dir = config.out_path

    if args.mode in ('specattn', 'topk'):
        mapping = _load_mapping(out_dir)
        mapping.check_models(draft, verifier)
    else:
        mapping = None

    policy = _generate_policy(args.mode, config, mapping)

    try:
        output, rounds = generate(draft, verifier, mapping, prompt,
                                  config.spec, policy=policy)

    except GenerationError as exc:
        _write_generation(out_dir, config.fingerprint(), args.mode, prompt,
                          exc.output, exc.rounds)
        raise

    _write_generation(out_dir, config.fingerprint(), args.mode, prompt,
                      output, rounds)

    accepted = sum(record.n_accepted for record in rounds)
    print('Generated ' + str(len(output) - len(prompt)) + ' tokens in ' +
          str(len(rounds)) + ' rounds (' + str(accepted) + ' drafts ' +
          'accepted).')


def cmd_bench(args):
    ''' Compare attention methods; writes report.csv, report.json and
    ppl_trace.csv.
    '''
    from specattn.harness import compare_methods
    from specattn.harness import write_reports

    config = _load_config(args)
    config.validate(require_corpus=True)
    corpus = _read_bytes(config.resolve(config.corpus), 'Corpus')
    draft, verifier = _build_models(config)
    out_dir = config.out_path
    mapping = _load_mapping(out_dir)

    reports, traces = compare_methods(draft, verifier, mapping, corpus,
                                      config.spec, config.bench)
    write_reports(reports, traces, out_dir, config.fingerprint())

    for report in reports:
        print('{:<20} ppl {:>10.4f}  delta {:>+9.4f}  kv-reduction {:>6.2f}%'
              .format(report.method, report.perplexity,
                      report.perplexity_delta, report.kv_reduction))


def cmd_oracle_check(args):
    ''' Run the randomized selection and alignment self-checks.
    '''
    from specattn.oracles import run_suites

    config = _load_config(args, required=False)
    if args.trials is not None:
        config.oracle.nucleus_trials = args.trials
        config.oracle.dtw_trials = args.trials
    config.oracle.validate()

    for suite in run_suites(config.oracle, inject_fault=args.inject_fault):
        print(suite.summary())


# ###############################################
# Root parsers
# ###############################################


common_parser = argparse.ArgumentParser(add_help=False)
common_parser.add_argument(
    '--config', '-c',
    action = 'store',
    dest = 'config',
    default = None,
    type = str,
    help = 'Path to the run config (JSON or YAML). Defaults to ' +
           'specattn.json in $SPECATTN_HOME or the current directory.'
)
common_parser.add_argument(
    '--out-dir', '-o',
    action = 'store',
    dest = 'out_dir',
    default = None,
    type = str,
    help = 'Override the output directory.'
)
common_parser.add_argument(
    '--p',
    action = 'store',
    dest = 'p',
    default = None,
    type = float,
    help = 'Override the nucleus mass threshold.'
)
common_parser.add_argument(
    '--gamma',
    action = 'store',
    dest = 'gamma',
    default = None,
    type = int,
    help = 'Override the lookahead (draft tokens per round).'
)
common_parser.add_argument(
    '--seed',
    action = 'store',
    dest = 'seed',
    default = None,
    type = int,
    help = 'Override the weight seed of both models.'
)
common_parser.add_argument(
    '--verbosity', '-V',
    action = 'store',
    dest = 'verbosity',
    type = str,
    choices = ['debug', 'info', 'warning', 'error', 'extreme'],
    default = None,
    help = 'Sets the log verbosity, over $SPECATTN_LOG.'
)


root_parser = argparse.ArgumentParser(
    description = 'Speculative decoding with draft-attention-guided ' +
                  'sparse verification, at desk scale.',
    prog = 'specattn'
)
subparsers = root_parser.add_subparsers()


calibrate_parser = subparsers.add_parser(
    'calibrate',
    parents = [common_parser],
    help = 'Map verifier layers to draft layers on the corpus.',
    prog = 'specattn calibrate'
)
calibrate_parser.set_defaults(entry_point=cmd_calibrate)


generate_parser = subparsers.add_parser(
    'generate',
    parents = [common_parser],
    help = 'Speculatively decode from a prompt file.',
    prog = 'specattn generate'
)
generate_parser.set_defaults(entry_point=cmd_generate)
generate_parser.add_argument(
    '--prompt',
    action = 'store',
    dest = 'prompt',
    default = None,
    type = str,
    help = 'Override the prompt file.'
)
generate_parser.add_argument(
    '--mode',
    action = 'store',
    dest = 'mode',
    choices = ['specattn', 'dense-only', 'streaming', 'topk'],
    default = 'specattn',
    help = 'How the verifier chooses what to attend to.'
)


bench_parser = subparsers.add_parser(
    'bench',
    parents = [common_parser],
    help = 'Compare full attention, nucleus masks and baselines.',
    prog = 'specattn bench'
)
bench_parser.set_defaults(entry_point=cmd_bench)


oracle_parser = subparsers.add_parser(
    'oracle-check',
    parents = [common_parser],
    help = 'Check selection and alignment against exhaustive references.',
    prog = 'specattn oracle-check'
)
oracle_parser.set_defaults(entry_point=cmd_oracle_check)
oracle_parser.add_argument(
    '--trials',
    action = 'store',
    dest = 'trials',
    default = None,
    type = int,
    help = 'Trials per suite.'
)
oracle_parser.add_argument(
    '--inject-fault',
    action = 'store_true',
    dest = 'inject_fault',
    default = False,
    help = argparse.SUPPRESS
)


# ###############################################
# Master entry point (specattn)
# ###############################################


def main(argv=None):
    ''' Entry point for all command line stuff. Returns the exit code:
    0 on success, 1 when a check fails, 2 on usage or config errors.
    '''
    # This allows us to test with an explicit argstring instead of through the
    # command line only
    args = root_parser.parse_args(args=argv)

    if not hasattr(args, 'entry_point'):
        # Let the invoker know that no command was selected
        root_parser.print_usage(sys.stderr)
        return 2

    try:
        # This invokes the entry point with the parsed args
        args.entry_point(args)

    except CheckFailure as exc:
        print('specattn: check failed: ' + str(exc), file=sys.stderr)
        return 1

    except (SpecAttnException, OSError) as exc:
        logger.debug('Command failed.', exc_info=True)
        print('specattn: error: ' + str(exc), file=sys.stderr)
        return 2

    return 0


if __name__ == '__main__':
    # We now return to your regularly scheduled programming
    sys.exit(main())
