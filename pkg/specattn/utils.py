'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

import json
import hashlib
import pathlib

import numpy as np


# ###############################################
# Logging boilerplate
# ###############################################


import logging
logger = logging.getLogger(__name__)


# Control * imports.
__all__ = [
    'fingerprint',
    'edit_distance',
    'dump_json',
]


# ###############################################
# Lib
# ###############################################


def _ensure_dir_exists(path):
    ''' Ensures the existence of a directory. Path must be to the dir,
    and not to a file therewithin.
    '''
    path = pathlib.Path(path).absolute()
    if not path.exists():
        path.mkdir(parents=True)

    elif not path.is_dir():
        raise FileExistsError('Path exists already and is not a directory.')


def canonical_json(obj):
    ''' Encode obj as compact JSON with sorted keys. Equal objects give
    equal strings.
    '''
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def fingerprint(obj):
    ''' Hex sha256 of the canonical JSON encoding of obj.
    '''
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()


def dump_json(obj, path):
    ''' Write obj as indented, key-sorted JSON with a trailing newline.
    '''
    text = json.dumps(obj, sort_keys=True, indent=2) + '\n'
    pathlib.Path(path).write_text(text)


def edit_distance(a, b):
    ''' Levenshtein distance between two token sequences.
    '''
    a = list(a)
    b = list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)

    previous = np.arange(len(b) + 1)
    for ii, token in enumerate(a, start=1):
        current = np.empty_like(previous)
        current[0] = ii
        for jj, other in enumerate(b, start=1):
            current[jj] = min(
                previous[jj] + 1,
                current[jj - 1] + 1,
                previous[jj - 1] + (token != other)
            )
        previous = current

    return int(previous[-1])
