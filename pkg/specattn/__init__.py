'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------

'''

# Submodules
from . import exceptions
from . import logutils
from . import utils
from . import config
from . import numerics
from . import model
from . import weights
from . import select
from . import layermap
from . import specdecode
from . import harness
from . import oracles

# Add in toplevel stuff
from .config import Config
from .model import Model
from .model import init_model
from .layermap import LayerMapping
from .layermap import calibrate
from .specdecode import generate
from .harness import compare_methods


# ###############################################
# Boilerplate
# ###############################################


# Logging shenanigans
import logging
from logging import NullHandler
logging.getLogger(__name__).addHandler(NullHandler())


__version__ = '0.1.0'

# Control * imports.
__all__ = [
    'Config',
    'Model',
    'init_model',
    'LayerMapping',
    'calibrate',
    'generate',
    'compare_methods',
]
