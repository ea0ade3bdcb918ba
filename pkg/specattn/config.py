'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Global dependencies
import pathlib
import collections
import copy
import inspect
import os
import math

import yaml

# Intra-package dependencies
from .exceptions import ConfigError
from .exceptions import ConfigIncomplete
from .exceptions import ConfigMissing

from .utils import fingerprint


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'ModelConfig',
    'SelectionConfig',
    'SpecConfig',
    'CalibrationConfig',
    'BenchConfig',
    'OracleConfig',
    'Config',
]


ATTENTION_MODES = ('renormalized', 'eq2')
SELECTORS = ('sortfree', 'oracle')
AGGREGATIONS = ('mean', 'max', 'union')
BASELINES = ('streaming', 'topk', 'quest')


# ###############################################
# Helper classes and encoder/decoder
# ###############################################


def _yaml_caster(loader, data):
    ''' Preserve order of OrderedDicts, and re-cast them as normal maps.
    '''
    return loader.represent_mapping('tag:yaml.org,2002:map', data.items())


yaml.add_representer(collections.OrderedDict, _yaml_caster)


def _optional_path(value):
    ''' Decode a path, leaving None alone.
    '''
    if value is None:
        return None
    return pathlib.Path(value)


# ###############################################
# Library
# ###############################################


class AutoField:
    ''' Helper class descriptor for AutoMappers.
    '''

    def __init__(self, subfield=None, *args, listed=False, decode=None,
                 encode=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.subfield = subfield
        self._encode = encode
        self._decode = decode
        self.listed = listed

    def encode(self, value):
        ''' Wrap encode_single to support iteration.
        '''
        if self.listed and value is not None:
            result = []
            for item in value:
                result.append(self.encode_single(item))

        else:
            result = self.encode_single(value)

        return result

    def encode_single(self, value):
        if value is None:
            return value
        elif self.subfield is not None:
            return value.entranscode()
        elif self._encode is None:
            return value
        elif callable(self._encode):
            return self._encode(value)
        else:
            return getattr(value, self._encode)()

    def decode(self, value):
        ''' Wrap decode_single to support iteration.
        '''
        if self.listed and value is not None:
            result = []
            for item in value:
                result.append(self.decode_single(item))

        else:
            result = self.decode_single(value)

        return result

    def decode_single(self, value):
        if value is None:
            if self.subfield is not None:
                return self.subfield()
            return value
        elif self.subfield is not None:
            instance = self.subfield()
            instance.detranscode(value)
            return instance
        elif self._decode is None:
            return value
        elif callable(self._decode):
            return self._decode(value)
        else:
            raise TypeError('Decoding must use a callable.')

    @property
    def name(self):
        ''' Reading is trivial.
        '''
        try:
            return self._name
        except AttributeError:
            return None

    @name.setter
    def name(self, value):
        ''' Writing checks to see if we have a value; if we do, it
        silently ignores the change.
        '''
        if not hasattr(self, '_name'):
            self._name = value
        elif self._name is None:
            self._name = value

    def __get__(self, instance, owner):
        if instance is None:
            return self
        else:
            return instance._fields[self.name]

    def __set__(self, instance, value):
        ''' Set the value at the instance's _fields OrderedDict.
        '''
        if self.subfield is not None and not isinstance(value,
                                                        self.subfield):
            raise AttributeError('Cannot set AutoMapper attribute with ' +
                                 'subfield directly, except as an instance ' +
                                 'of the subfield.')

        else:
            instance._fields[self.name] = value

    def __delete__(self, instance):
        ''' Reset the value at the instance's _fields OrderedDict to its
        null state.
        '''
        if self.listed:
            instance._fields[self.name] = []

        elif self.subfield:
            instance._fields[self.name] = self.subfield()

        else:
            instance._fields[self.name] = None


class _AutoMapperMixin:
    ''' Inject a control OrderedDict for the fields.
    '''
    DEFAULTS = {}

    def __init__(self, *args, **kwargs):
        # Create self._fields, the ordereddict equivalent of self.__dict__
        self._fields = collections.OrderedDict()
        # For each field, delete it, resulting in the descriptor performing an
        # initialization to its null state
        for field in self.fields:
            delattr(self, field)

        bound_args = self._signature.bind_partial(*args, **kwargs)
        args = bound_args.arguments.pop('args', tuple())
        kwargs = bound_args.arguments.pop('kwargs', {})
        for name, value in bound_args.arguments.items():
            setattr(self, name, value)

        self.coerce_defaults()

        super().__init__(*args, **kwargs)

    def coerce_defaults(self):
        ''' Finds any null fields and converts them to a default value.
        '''
        for field, default in self.DEFAULTS.items():
            if self._fields[field] is None:
                self._fields[field] = copy.deepcopy(default)

    def entranscode(self):
        ''' Convert the object typed self._fields into a natively
        serializable ordereddict.
        '''
        transcoded = collections.OrderedDict()

        cls = type(self)
        for field in self.fields:
            descriptor = getattr(cls, field)
            value = self._fields[field]
            # Note that the descriptor handles nested fields and Nones
            transcoded[field] = descriptor.encode(value)

        return transcoded

    def detranscode(self, data):
        ''' Apply the natively deserialized ordereddict into
        self._fields.
        '''
        cls = type(self)

        if data is not None and not isinstance(data, dict):
            raise ConfigError('Expected a mapping for ' + cls.__name__ +
                              ', got ' + type(data).__name__)

        for field in self.fields:
            descriptor = getattr(cls, field)

            if data is None or field not in data:
                logger.debug(cls.__name__ + ' using default for: ' + field)

            else:
                try:
                    self._fields[field] = descriptor.decode(data[field])

                except Exception as exc:
                    raise ConfigError('Failed to decode field: ' +
                                      field) from exc

        if data is not None:
            unknown = set(data) - set(self.fields)
            if unknown:
                raise ConfigError('Unknown ' + cls.__name__ + ' field(s): ' +
                                  ', '.join(sorted(unknown)))

        self.coerce_defaults()

    def copy(self):
        return copy.deepcopy(self)

    def __repr__(self):
        ''' Wrap in nice handling of fields.
        '''
        rep = type(self).__name__ + '('
        for field in self.fields:
            rep += field + '=' + repr(getattr(self, field)) + ', '
        rep = rep[:-2] + ')'
        return rep

    def __eq__(self, other):
        ''' Compare type of self and all fields.
        '''
        mycls = type(self)
        othercls = type(other)

        comparator = True
        if issubclass(mycls, othercls) or issubclass(othercls, mycls):
            try:
                comparator &= (self._fields == other._fields)

            except AttributeError as exc:
                raise TypeError(other) from exc

        else:
            comparator &= False

        return comparator

    # Restore normal hashing
    __hash__ = object.__hash__


class _AutoMapper(type):
    ''' Metaclass used for automatically mapping a structured something
    into objects with properties and names and stuff.
    '''

    # Remember the order of class variable definitions!
    @classmethod
    def __prepare__(mcls, clsname, bases, **kwargs):
        return collections.OrderedDict()

    def __new__(mcls, clsname, bases, namespace, **kwargs):
        fields = []
        parameters = []
        for name, value in namespace.items():
            if name in {'fields', '_fields', '_signature', 'args', 'kwargs'}:
                raise ValueError('Invalid class variable name for ' +
                                 'AutoMapper: ' + name)
            elif isinstance(value, AutoField):
                fields.append(name)
                value.name = name
                parameters.append(
                    inspect.Parameter(
                        name = name,
                        kind = inspect.Parameter.POSITIONAL_OR_KEYWORD
                    )
                )

        # Support inheritance by adding *args and **kwargs to the signature
        parameters.append(
            inspect.Parameter(
                name = 'args',
                kind = inspect.Parameter.VAR_POSITIONAL
            )
        )
        parameters.append(
            inspect.Parameter(
                name = 'kwargs',
                kind = inspect.Parameter.VAR_KEYWORD
            )
        )

        bases = (_AutoMapperMixin, *bases)
        cls = super().__new__(mcls, clsname, bases, dict(namespace), **kwargs)
        cls.fields = fields
        cls._signature = inspect.Signature(parameters)
        return cls


# ###############################################
# Validation helpers
# ###############################################


def _require_int(record, field, minimum=None):
    value = getattr(record, field)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(type(record).__name__ + '.' + field +
                          ' must be an integer, got ' + repr(value))
    if minimum is not None and value < minimum:
        raise ConfigError(type(record).__name__ + '.' + field +
                          ' must be >= ' + str(minimum) + ', got ' +
                          repr(value))


def _require_real(record, field, low=None, high=None, low_open=False):
    value = getattr(record, field)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(type(record).__name__ + '.' + field +
                          ' must be a number, got ' + repr(value))
    if not math.isfinite(value):
        raise ConfigError(type(record).__name__ + '.' + field +
                          ' must be finite')
    if low is not None:
        if (low_open and value <= low) or (not low_open and value < low):
            raise ConfigError(type(record).__name__ + '.' + field +
                              ' out of range: ' + repr(value))
    if high is not None and value > high:
        raise ConfigError(type(record).__name__ + '.' + field +
                          ' out of range: ' + repr(value))


def _require_choice(record, field, choices):
    value = getattr(record, field)
    if value not in choices:
        raise ConfigError(type(record).__name__ + '.' + field +
                          ' must be one of ' + ', '.join(choices) +
                          '; got ' + repr(value))


# ###############################################
# Records
# ###############################################


class ModelConfig(metaclass=_AutoMapper):
    ''' Shape and seed of a toy decoder. d_head and d_ff are derived.
    '''
    n_layers = AutoField()
    n_heads = AutoField()
    d_model = AutoField()
    vocab = AutoField()
    max_seq = AutoField()
    seed = AutoField()
    init_scale = AutoField()
    rope_base = AutoField()

    DEFAULTS = {
        'n_layers': 4,
        'n_heads': 4,
        'd_model': 64,
        'vocab': 256,
        'max_seq': 4608,
        'seed': 0,
        'init_scale': 2.0,
        'rope_base': 10000.0,
    }

    # Feed-forward width multiplier
    FF_MULT = 4

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    @property
    def d_ff(self):
        return self.FF_MULT * self.d_model

    def validate(self):
        _require_int(self, 'n_layers', 1)
        _require_int(self, 'n_heads', 1)
        _require_int(self, 'd_model', 1)
        _require_int(self, 'vocab', 2)
        _require_int(self, 'max_seq', 1)
        _require_int(self, 'seed', 0)
        _require_real(self, 'init_scale', 0, low_open=True)
        _require_real(self, 'rope_base', 1, low_open=True)

        if self.seed >= 2**64:
            raise ConfigError('ModelConfig.seed must fit in 64 bits.')
        if self.d_model % self.n_heads:
            raise ConfigError('d_model (' + str(self.d_model) + ') must ' +
                              'equal n_heads x d_head; not divisible by ' +
                              'n_heads (' + str(self.n_heads) + ')')
        if self.d_head % 2:
            raise ConfigError('d_head must be even for rotary embedding, ' +
                              'got ' + str(self.d_head))
        return self


class SelectionConfig(metaclass=_AutoMapper):
    ''' Token selection knobs: nucleus mass, binary search iterations,
    chunk granularity, and how many leading layers stay dense.
    '''
    p = AutoField()
    iterations = AutoField()
    block_size = AutoField()
    dense_prefix_layers = AutoField()
    epsilon = AutoField()
    selector = AutoField()
    aggregation = AutoField()

    DEFAULTS = {
        'p': 0.95,
        'iterations': 10,
        'block_size': 1,
        'dense_prefix_layers': 2,
        'selector': 'sortfree',
        'aggregation': 'mean',
    }

    def validate(self):
        _require_real(self, 'p', 0, 1, low_open=True)
        _require_int(self, 'iterations', 1)
        _require_int(self, 'block_size', 1)
        _require_int(self, 'dense_prefix_layers', 0)
        if self.epsilon is not None:
            _require_real(self, 'epsilon', 0, low_open=True)
        _require_choice(self, 'selector', SELECTORS)
        _require_choice(self, 'aggregation', AGGREGATIONS)
        return self


class SpecConfig(metaclass=_AutoMapper):
    ''' Speculative decoding loop settings.
    '''
    gamma = AutoField()
    max_tokens = AutoField()
    eos_token = AutoField()
    attention_mode = AutoField()
    selection = AutoField(SelectionConfig)

    DEFAULTS = {
        'gamma': 4,
        'max_tokens': 64,
        'attention_mode': 'renormalized',
    }

    def validate(self):
        _require_int(self, 'gamma', 1)
        _require_int(self, 'max_tokens', 1)
        if self.eos_token is not None:
            _require_int(self, 'eos_token', 0)
        _require_choice(self, 'attention_mode', ATTENTION_MODES)
        self.selection.validate()
        return self


class CalibrationConfig(metaclass=_AutoMapper):
    warmup = AutoField()
    stride = AutoField()
    epsilon = AutoField()

    DEFAULTS = {
        'warmup': 8,
        'stride': 1,
        'epsilon': 1e-10,
    }

    def validate(self):
        _require_int(self, 'warmup', 0)
        _require_int(self, 'stride', 1)
        _require_real(self, 'epsilon', 0, low_open=True)
        return self


class BenchConfig(metaclass=_AutoMapper):
    p_values = AutoField(decode=list)
    prefill_fraction = AutoField()
    baselines = AutoField(decode=list)
    n_sink = AutoField()
    n_recent = AutoField()
    budget = AutoField()
    page_size = AutoField()
    workers = AutoField()
    corpus_bytes = AutoField()

    DEFAULTS = {
        'p_values': [0.8, 0.9, 0.95, 0.99],
        'prefill_fraction': 0.1,
        'baselines': list(BASELINES),
        'n_sink': 4,
        'page_size': 16,
        'workers': 4,
    }

    def validate(self):
        if not self.p_values:
            raise ConfigIncomplete('BenchConfig.p_values is empty.')
        for p in self.p_values:
            if isinstance(p, bool) or not isinstance(p, (int, float)) or \
                    not 0 < p <= 1:
                raise ConfigError('BenchConfig.p_values entries must be ' +
                                  'in (0, 1]; got ' + repr(p))
        _require_real(self, 'prefill_fraction', 0, 1, low_open=True)
        for baseline in self.baselines:
            if baseline not in BASELINES:
                raise ConfigError('Unknown baseline: ' + repr(baseline))
        _require_int(self, 'n_sink', 0)
        if self.n_recent is not None:
            _require_int(self, 'n_recent', 0)
        if self.budget is not None:
            _require_int(self, 'budget', 1)
        _require_int(self, 'page_size', 1)
        _require_int(self, 'workers', 1)
        if self.corpus_bytes is not None:
            _require_int(self, 'corpus_bytes', 2)
        return self


class OracleConfig(metaclass=_AutoMapper):
    nucleus_trials = AutoField()
    dtw_trials = AutoField()
    max_length = AutoField()
    seed = AutoField()

    DEFAULTS = {
        'nucleus_trials': 1000,
        'dtw_trials': 500,
        'max_length': 4096,
        'seed': 0,
    }

    def validate(self):
        _require_int(self, 'nucleus_trials', 0)
        _require_int(self, 'dtw_trials', 0)
        _require_int(self, 'max_length', 1)
        _require_int(self, 'seed', 0)
        return self


class ModelSpec(metaclass=_AutoMapper):
    ''' A model section of the run config: its shape, and optionally a
    weight file to load instead of seeded initialization.
    '''
    config = AutoField(ModelConfig)
    weights = AutoField(decode=_optional_path, encode=str)


class Instrumentation(metaclass=_AutoMapper):
    verbosity = AutoField()
    logdir = AutoField(decode=_optional_path, encode=str)

    DEFAULTS = {
        'verbosity': 'warning',
    }


class Config(metaclass=_AutoMapper):
    ''' The run configuration. Every command is reproducible from this
    file alone; relative paths resolve against the file's directory.

    <root> /
    +---(specattn.json)
    +---(corpus, prompt, weight files...)
    +---out
        +---mapping.json
        +---simmatrix.csv
        +---report.csv / report.json / ppl_trace.csv
        +---rounds.jsonl / generated.bin
    '''
    draft = AutoField(ModelSpec)
    verifier = AutoField(ModelSpec)
    corpus = AutoField(decode=_optional_path, encode=str)
    prompt = AutoField(decode=_optional_path, encode=str)
    spec = AutoField(SpecConfig)
    calibration = AutoField(CalibrationConfig)
    bench = AutoField(BenchConfig)
    oracle = AutoField(OracleConfig)
    out_dir = AutoField(decode=_optional_path, encode=str)
    instrumentation = AutoField(Instrumentation)

    TARGET_FNAMES = ('specattn.json', 'specattn.yml')

    def __init__(self, path=None, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if path is None:
            path = pathlib.Path('.') / self.TARGET_FNAMES[0]
        self.path = pathlib.Path(path).absolute()

    @property
    def root(self):
        return self.path.parent

    @classmethod
    def find(cls):
        ''' Automatically locates any existing config file. Raises
        ConfigMissing if unable to locate.

        Search order:
        1.  Environment variable "SPECATTN_HOME"
        2.  Current directory
        '''
        search_order = []
        envpath = os.getenv('SPECATTN_HOME')
        if envpath:
            search_order.append(pathlib.Path(envpath))
        search_order.append(pathlib.Path('.').absolute())

        fpaths = (dirpath / fname for dirpath in search_order
                  for fname in cls.TARGET_FNAMES)
        for fpath in fpaths:
            if fpath.exists():
                break
        else:
            raise ConfigMissing('No specattn config found.')

        return cls.load(fpath)

    @classmethod
    def load(cls, path):
        ''' Load a config from a path.
        '''
        path = pathlib.Path(path)
        try:
            cfg_txt = path.read_text()
        except FileNotFoundError as exc:
            raise ConfigMissing('Config file not found: ' +
                                str(path)) from exc

        self = cls(path)
        self.decode(cfg_txt)
        return self

    def dump(self, path):
        ''' Dump a config to a path.
        '''
        pathlib.Path(path).write_text(self.encode())

    def encode(self):
        ''' Converts the config into an encoded file ready for output.
        '''
        raw_cfg = self.entranscode()
        return yaml.dump(raw_cfg, default_flow_style=False)

    def decode(self, data):
        ''' Load an existing config. JSON is valid yaml, so this reads
        both formats.
        '''
        try:
            raw_cfg = yaml.safe_load(data)
        except yaml.YAMLError as exc:
            raise ConfigError('Config is neither JSON nor YAML.') from exc
        self.detranscode(raw_cfg)

    def resolve(self, path):
        ''' Resolve a (possibly relative) config path against the config
        file's directory.
        '''
        if path is None:
            return None
        path = pathlib.Path(path)
        if not path.is_absolute():
            path = self.root / path
        return path

    @property
    def out_path(self):
        if self.out_dir is None:
            return self.root / 'out'
        return self.resolve(self.out_dir)

    def validate(self, require_corpus=False, require_prompt=False):
        ''' Check numeric ranges of every record and that referenced
        files exist.
        '''
        self.draft.config.validate()
        self.verifier.config.validate()
        if self.draft.config.vocab != self.verifier.config.vocab:
            raise ConfigError('Draft and verifier vocabularies differ.')
        self.spec.validate()
        self.calibration.validate()
        self.bench.validate()
        self.oracle.validate()

        for section in (self.draft, self.verifier):
            if section.weights is not None:
                weights = self.resolve(section.weights)
                if not weights.exists():
                    raise ConfigMissing('Weight file not found: ' +
                                        str(weights))

        if require_corpus:
            if self.corpus is None:
                raise ConfigIncomplete('No corpus configured.')
            corpus = self.resolve(self.corpus)
            if not corpus.exists():
                raise ConfigMissing('Corpus not found: ' + str(corpus))

        if require_prompt:
            if self.prompt is None:
                raise ConfigIncomplete('No prompt configured.')
            prompt = self.resolve(self.prompt)
            if not prompt.exists():
                raise ConfigMissing('Prompt not found: ' + str(prompt))

        return self

    def fingerprint(self):
        ''' Stable hash of everything that determines a run's outputs.
        Output locations and instrumentation are excluded.
        '''
        raw_cfg = self.entranscode()
        del raw_cfg['out_dir']
        del raw_cfg['instrumentation']
        return fingerprint(raw_cfg)
