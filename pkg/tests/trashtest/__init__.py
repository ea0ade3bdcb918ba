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
import pathlib
import pkgutil
import inspect
import importlib

__all__ = []

# The test modules import their fixtures as a top-level _fixtures package.
_here = str(pathlib.Path(__file__).absolute().parent)
if _here not in sys.path:
    sys.path.insert(0, _here)

# We want to load everything, but we want to do it in a way that doesn't cause
# name conflicts if the tests accidentally reuse test case names.
for loader, mod_name, is_pkg in pkgutil.iter_modules(__path__):
    if is_pkg or not mod_name.startswith('test_'):
        continue

    module = importlib.import_module(__name__ + '.' + mod_name)

    # So let's go ahead and forcibly name mangle everything.
    for member_name, member in inspect.getmembers(module, inspect.isclass):
        if member_name.startswith('_'):
            continue
        if member.__module__ != module.__name__:
            continue

        # Mangle the name. This doesn't match up with "stock" name mangling,
        # instead it's just <module name>_<member name>
        mangled_name = mod_name + '_' + member_name

        globals()[mangled_name] = member
        __all__.append(mangled_name)
