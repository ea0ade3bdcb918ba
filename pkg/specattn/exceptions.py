'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Control * imports.
__all__ = [
    # Base class for all of the above
    'SpecAttnException',
    # These are numerics errors
    'NumericsError',
    # These are model errors
    'ModelError',
    'ContextOverflow',
    'MaskMismatch',
    'CacheError',
    'WeightFileError',
    'ConfigMismatch',
    # These are selection errors
    'SelectionError',
    'CsrError',
    # These are layer mapping errors
    'MappingError',
    'CalibrationError',
    # These are generation and measurement errors
    'GenerationError',
    'HarnessError',
    'CheckFailure',
    # These are configuration errors
    'ConfigError',
    'ConfigIncomplete',
    'ConfigMissing',
]


class SpecAttnException(Exception):
    ''' This is suclassed for all exceptions and warnings, so that code
    using specattn as an import can successfully catch all specattn
    exceptions with a single except.
    '''
    pass


class NumericsError(SpecAttnException, ValueError):
    ''' Raised for invalid inputs to the attention kernels: empty or
    non-finite logits, inconsistent shapes, or an empty attention
    support.
    '''
    pass


class ModelError(SpecAttnException, RuntimeError):
    ''' This exception (or a subclass thereof) is raised for all issues
    related to the toy transformer and its caches.
    '''
    pass


class ContextOverflow(ModelError):
    ''' Raised when a forward step would grow a KV cache past the
    model's max_seq.
    '''
    pass


class MaskMismatch(ModelError, ValueError):
    ''' Raised when a per-layer mask does not match the length of the
    cache it is applied to.
    '''
    pass


class CacheError(ModelError, ValueError):
    ''' Raised on an invalid KV cache operation (eg. rolling forwards).
    '''
    pass


class WeightFileError(ModelError, IOError):
    ''' Raised when a weight file is malformed: bad header, inconsistent
    manifest, or truncated payload.
    '''
    pass


class ConfigMismatch(WeightFileError):
    ''' Raised when a weight file was written for a different model
    config than the one requested.
    '''
    pass


class SelectionError(SpecAttnException, ValueError):
    ''' Raised for invalid token selection parameters.
    '''
    pass


class CsrError(SelectionError):
    ''' Raised for malformed CSR masks: non-monotone row offsets,
    out-of-range or unsorted column indices.
    '''
    pass


class MappingError(SpecAttnException, ValueError):
    ''' Raised for invalid similarity matrices, mappings, or mapping
    files.
    '''
    pass


class CalibrationError(MappingError):
    ''' Raised when calibration traces cannot be produced or compared,
    for example because the corpus is too short.
    '''
    pass


class GenerationError(SpecAttnException, RuntimeError):
    ''' Raised when speculative generation fails partway. Whatever was
    emitted before the failure is kept on the exception.
    '''

    def __init__(self, *args, output=None, rounds=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.output = output
        self.rounds = rounds


class HarnessError(SpecAttnException, RuntimeError):
    ''' Raised for degenerate measurement inputs (empty telemetry, a
    corpus with nothing to evaluate).
    '''
    pass


class CheckFailure(SpecAttnException, AssertionError):
    ''' Raised when an oracle suite or audit finds a violation.
    '''
    pass


class ConfigError(SpecAttnException, ValueError):
    ''' This exception (or a subclass thereof) is raised for all issues
    related to configuration.
    '''
    pass


class ConfigIncomplete(ConfigError):
    ''' Raised when the configuration is missing a required field.
    '''
    pass


class ConfigMissing(ConfigError, FileNotFoundError):
    ''' Raised when the configuration (or a path it references) could
    not be found.
    '''
    pass
