'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------
'''

# Always prefer setuptools over distutils
from setuptools import setup, find_packages

long_description = ('specattn runs speculative decoding with a toy draft ' +
                    'and verifier pair, and prunes the verifier\'s KV ' +
                    'reads to the tokens the draft attended to most.')

setup(
    name='specattn',

    # Versions should comply with PEP440.
    version='0.1.0',

    description='Draft-attention-guided sparse verification for ' +
                'speculative decoding.',
    long_description=long_description,

    author='specattn contributors',

    license='Unlicense',

    # See https://pypi.python.org/pypi?%3Aaction=list_classifiers
    classifiers=[
        'Development Status :: 3 - Alpha',

        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',

        'License :: OSI Approved :: The Unlicense (Unlicense)',

        'Programming Language :: Python :: 3.5',
    ],

    keywords='speculative decoding, sparse attention, kv cache, nucleus, ' +
             'dynamic time warping',

    packages=find_packages(exclude=['contrib', 'docs', 'tests']),

    # List run-time dependencies here.
    install_requires=[
        'numpy>=1.17',
        'scipy>=1.4',
        'pyyaml>=3.12'
    ],

    extras_require={
        'dev': [],
        'test': [],
    },

    package_data={
    },

    entry_points = {
        'console_scripts': ['specattn=specattn.cli:main']
    }
)
