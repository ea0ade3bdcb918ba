'''
Weight file format:

    8 bytes     little-endian uint64: header length n
    n bytes     JSON header {"config": {...}, "format": ..., "tensors": [
                    {"name", "rows", "cols", "offset"}, ...]}
    payload     little-endian float64 tensors, row-major, concatenated

Offsets are byte offsets into the payload. They must tile it exactly.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

import json
import struct
import pathlib
import collections

import numpy as np

from .exceptions import WeightFileError
from .exceptions import ConfigMismatch
from .exceptions import ConfigError

from .config import ModelConfig
from .model import Model
from .model import tensor_specs
from .utils import canonical_json


# ###############################################
# Boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)

# Control * imports.
__all__ = [
    'save_weights',
    'load_weights',
]


FORMAT_TAG = 'specattn-weights/1'
_LENGTH_PREFIX = struct.Struct('<Q')
_ITEMSIZE = 8


# ###############################################
# Lib
# ###############################################


def save_weights(model, path):
    ''' Write the model's config and tensors to path.
    '''
    tensors = []
    offset = 0
    for name, rows, cols in model.manifest:
        tensors.append({
            'name': name,
            'rows': rows,
            'cols': cols,
            'offset': offset
        })
        offset += rows * cols * _ITEMSIZE

    header = {
        'format': FORMAT_TAG,
        'config': model.config.entranscode(),
        'tensors': tensors,
    }
    header_bytes = canonical_json(header).encode('utf-8')

    path = pathlib.Path(path)
    with path.open('wb') as f:
        f.write(_LENGTH_PREFIX.pack(len(header_bytes)))
        f.write(header_bytes)
        for name, __, __ in model.manifest:
            f.write(np.ascontiguousarray(model[name], dtype='<f8').tobytes())

    logger.info('Wrote ' + str(len(tensors)) + ' tensors to ' + str(path))


def _read_header(f, path):
    prefix = f.read(_LENGTH_PREFIX.size)
    if len(prefix) != _LENGTH_PREFIX.size:
        raise WeightFileError('Truncated header length in ' + str(path))

    header_len, = _LENGTH_PREFIX.unpack(prefix)
    header_bytes = f.read(header_len)
    if len(header_bytes) != header_len:
        raise WeightFileError('Truncated header in ' + str(path))

    try:
        header = json.loads(header_bytes.decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as exc:
        raise WeightFileError('Unreadable header in ' + str(path)) from exc

    if not isinstance(header, dict) or header.get('format') != FORMAT_TAG:
        raise WeightFileError('Not a specattn weight file: ' + str(path))

    return header


def _check_manifest(header, config):
    ''' Make sure the manifest names every expected tensor, in order,
    with the right shapes and contiguous offsets. Returns the expected
    payload size in bytes.
    '''
    tensors = header.get('tensors')
    expected = list(tensor_specs(config))
    if not isinstance(tensors, list) or len(tensors) != len(expected):
        raise WeightFileError('Manifest lists the wrong number of tensors.')

    offset = 0
    for entry, spec in zip(tensors, expected):
        name, rows, cols, __, __ = spec
        try:
            entry_name = entry['name']
            entry_shape = (entry['rows'], entry['cols'])
            entry_offset = entry['offset']
        except (KeyError, TypeError) as exc:
            raise WeightFileError('Malformed manifest entry.') from exc

        if entry_name != name:
            raise WeightFileError('Manifest tensor ' + repr(entry_name) +
                                  ' where ' + repr(name) + ' was expected.')
        if entry_shape != (rows, cols):
            raise WeightFileError('Tensor ' + name + ' has manifest shape ' +
                                  str(entry_shape) + ', expected ' +
                                  str((rows, cols)))
        if entry_offset != offset:
            raise WeightFileError('Tensor ' + name + ' has offset ' +
                                  str(entry_offset) + ', expected ' +
                                  str(offset))
        offset += rows * cols * _ITEMSIZE

    return offset


def load_weights(path, config=None):
    ''' Load a model from path. If config is given, the file must have
    been written for an equal config.
    '''
    path = pathlib.Path(path)
    with path.open('rb') as f:
        header = _read_header(f, path)

        file_config = ModelConfig()
        stored = header.get('config')
        if not isinstance(stored, dict):
            raise WeightFileError('No model config in ' + str(path))
        missing = set(file_config.entranscode()) - set(stored)
        if missing:
            raise WeightFileError('Model config in ' + str(path) +
                                  ' lacks ' + ', '.join(sorted(missing)))

        try:
            file_config.detranscode(stored)
            file_config.validate()
        except ConfigError as exc:
            raise WeightFileError('Invalid config in ' + str(path)) from exc

        if config is not None and config != file_config:
            raise ConfigMismatch('config mismatch: ' + str(path) +
                                 ' holds ' + repr(file_config))

        payload_size = _check_manifest(header, file_config)
        payload = f.read()

    if len(payload) < payload_size:
        raise WeightFileError('Truncated payload in ' + str(path) + ': ' +
                              str(len(payload)) + ' of ' +
                              str(payload_size) + ' bytes')
    if len(payload) > payload_size:
        raise WeightFileError('Trailing bytes after payload in ' + str(path))

    weights = collections.OrderedDict()
    for entry in header['tensors']:
        count = entry['rows'] * entry['cols']
        weights[entry['name']] = np.frombuffer(
            payload,
            dtype = '<f8',
            count = count,
            offset = entry['offset']
        ).reshape(entry['rows'], entry['cols'])

    logger.info('Loaded ' + str(len(weights)) + ' tensors from ' + str(path))
    return Model(file_config, weights)
