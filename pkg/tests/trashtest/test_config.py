'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------

'''

import unittest
import json
import tempfile
import pathlib
import os

from specattn.config import Config
from specattn.config import ModelConfig
from specattn.config import SelectionConfig
from specattn.config import SpecConfig
from specattn.config import BenchConfig

from specattn.utils import _ensure_dir_exists

from specattn.exceptions import ConfigError
from specattn.exceptions import ConfigIncomplete
from specattn.exceptions import ConfigMissing


# ###############################################
# Fixtures and vectors
# ###############################################


vec_cfg_yaml = '''
draft:
  config:
    n_layers: 2
    d_model: 16
    n_heads: 2
verifier:
  config:
    n_layers: 4
    d_model: 16
    n_heads: 2
  weights: verifier.weights
corpus: corpus.bin
spec:
  gamma: 3
  selection:
    p: 0.9
    dense_prefix_layers: 1
'''


vec_cfg_json = json.dumps({
    'draft': {'config': {'n_layers': 2, 'd_model': 16, 'n_heads': 2}},
    'verifier': {
        'config': {'n_layers': 4, 'd_model': 16, 'n_heads': 2},
        'weights': 'verifier.weights',
    },
    'corpus': 'corpus.bin',
    'spec': {'gamma': 3, 'selection': {'p': 0.9, 'dense_prefix_layers': 1}},
})


class _EnvVar:
    ''' Temporarily set an environment variable.
    '''

    def __init__(self, name, value):
        self.name = name
        self.value = value
        self.old = None

    def __enter__(self):
        self.old = os.environ.get(self.name)
        os.environ[self.name] = self.value

    def __exit__(self, exc_type, exc_value, exc_tb):
        if self.old is None:
            del os.environ[self.name]
        else:
            os.environ[self.name] = self.old


# ###############################################
# Testing
# ###############################################


class CfgSerialTest(unittest.TestCase):
    ''' Test round-trip serialization of the run config.
    '''

    def test_decode(self):
        from_yaml = Config()
        from_yaml.decode(vec_cfg_yaml)
        from_json = Config()
        from_json.decode(vec_cfg_json)
        self.assertEqual(from_yaml, from_json)

        self.assertEqual(from_yaml.draft.config.n_layers, 2)
        self.assertEqual(from_yaml.verifier.config.n_layers, 4)
        self.assertEqual(from_yaml.verifier.weights,
                         pathlib.Path('verifier.weights'))
        self.assertIsNone(from_yaml.draft.weights)
        self.assertEqual(from_yaml.spec.gamma, 3)
        self.assertEqual(from_yaml.spec.selection.p, 0.9)
        # Untouched fields keep their defaults
        self.assertEqual(from_yaml.spec.selection.iterations, 10)
        self.assertEqual(from_yaml.bench.p_values, [0.8, 0.9, 0.95, 0.99])
        self.assertEqual(from_yaml.draft.config.max_seq, 4608)

    def test_encode(self):
        config = Config()
        config.decode(vec_cfg_yaml)
        again = Config()
        again.decode(config.encode())
        self.assertEqual(config, again)
        self.assertEqual(config.encode(), again.encode())

    def test_unknown_field(self):
        config = Config()
        with self.assertRaises(ConfigError):
            config.decode('spec:\n  gama: 3\n')
        with self.assertRaises(ConfigError):
            config.decode('spec: [1, 2]\n')
        with self.assertRaises(ConfigError):
            config.decode('{not: valid: yaml')

    def test_fingerprint(self):
        one = Config()
        one.decode(vec_cfg_yaml)
        two = one.copy()
        two.out_dir = pathlib.Path('elsewhere')
        two.instrumentation.verbosity = 'debug'
        self.assertEqual(one.fingerprint(), two.fingerprint())

        two.spec.selection.p = 0.95
        self.assertNotEqual(one.fingerprint(), two.fingerprint())


class ValidateTest(unittest.TestCase):
    def test_defaults_valid(self):
        Config().validate()

    def test_model_ranges(self):
        for kwargs in ({'n_layers': 0},
                       {'d_model': 30, 'n_heads': 4},
                       {'d_model': 18, 'n_heads': 2},
                       {'vocab': 1},
                       {'seed': -1},
                       {'init_scale': 0.0},
                       {'n_layers': True}):
            with self.subTest(**kwargs):
                with self.assertRaises(ConfigError):
                    ModelConfig(**kwargs).validate()

        cfg = ModelConfig(d_model=16, n_heads=2)
        self.assertEqual(cfg.d_head, 8)
        self.assertEqual(cfg.d_ff, 64)

    def test_selection_ranges(self):
        for kwargs in ({'p': 0.0},
                       {'p': 1.5},
                       {'p': float('nan')},
                       {'iterations': 0},
                       {'block_size': 0},
                       {'dense_prefix_layers': -1},
                       {'epsilon': 0.0},
                       {'selector': 'sorted'},
                       {'aggregation': 'median'}):
            with self.subTest(**kwargs):
                with self.assertRaises(ConfigError):
                    SelectionConfig(**kwargs).validate()

        SelectionConfig(p=1.0).validate()

    def test_spec_ranges(self):
        with self.assertRaises(ConfigError):
            SpecConfig(gamma=0).validate()
        with self.assertRaises(ConfigError):
            SpecConfig(attention_mode='post').validate()
        with self.assertRaises(ConfigError):
            SpecConfig(selection=SelectionConfig(p=2.0)).validate()

    def test_bench_ranges(self):
        with self.assertRaises(ConfigIncomplete):
            BenchConfig(p_values=[]).validate()
        with self.assertRaises(ConfigError):
            BenchConfig(p_values=[0.0]).validate()
        with self.assertRaises(ConfigError):
            BenchConfig(baselines=['h2o']).validate()
        with self.assertRaises(ConfigError):
            BenchConfig(budget=0).validate()

    def test_vocab_mismatch(self):
        config = Config()
        config.verifier.config.vocab = 128
        with self.assertRaises(ConfigError):
            config.validate()

    def test_referenced_files(self):
        with tempfile.TemporaryDirectory() as root:
            root = pathlib.Path(root)
            config = Config(root / 'specattn.json')

            with self.assertRaises(ConfigIncomplete):
                config.validate(require_corpus=True)
            with self.assertRaises(ConfigIncomplete):
                config.validate(require_prompt=True)

            config.corpus = pathlib.Path('corpus.bin')
            with self.assertRaises(ConfigMissing):
                config.validate(require_corpus=True)
            (root / 'corpus.bin').write_bytes(b'corpus')
            config.validate(require_corpus=True)

            config.draft.weights = pathlib.Path('draft.weights')
            with self.assertRaises(ConfigMissing):
                config.validate()


class ConfigTest(unittest.TestCase):
    ''' Test locating, loading, and resolving against config files.
    '''

    def test_mk_blank(self):
        config = Config()
        self.assertTrue(hasattr(config, 'draft'))
        self.assertTrue(hasattr(config, 'verifier'))
        self.assertTrue(hasattr(config, 'spec'))
        self.assertTrue(hasattr(config, 'instrumentation'))
        self.assertEqual(config.instrumentation.verbosity, 'warning')

    def test_find_cfg_from_env(self):
        with tempfile.TemporaryDirectory() as root:
            fake_config = pathlib.Path(root) / 'specattn.json'
            fake_config.write_text(vec_cfg_json)

            with _EnvVar('SPECATTN_HOME', root):
                config = Config.find()

            self.assertEqual(config.path, fake_config.absolute())
            self.assertEqual(config.spec.gamma, 3)

    def test_find_yaml(self):
        with tempfile.TemporaryDirectory() as root:
            fake_config = pathlib.Path(root) / 'specattn.yml'
            fake_config.write_text(vec_cfg_yaml)

            with _EnvVar('SPECATTN_HOME', root):
                config = Config.find()

            self.assertEqual(config.path, fake_config.absolute())

    def test_load_missing(self):
        with tempfile.TemporaryDirectory() as root:
            with self.assertRaises(ConfigMissing):
                Config.load(pathlib.Path(root) / 'specattn.json')

    def test_resolve(self):
        with tempfile.TemporaryDirectory() as root:
            root = pathlib.Path(root).absolute()
            path = root / 'specattn.json'
            path.write_text(vec_cfg_json)
            config = Config.load(path)

            self.assertEqual(config.root, root)
            self.assertEqual(config.resolve(config.corpus),
                             root / 'corpus.bin')
            self.assertEqual(config.resolve(root / 'abs.bin'),
                             root / 'abs.bin')
            self.assertIsNone(config.resolve(None))
            self.assertEqual(config.out_path, root / 'out')

            config.out_dir = pathlib.Path('results')
            self.assertEqual(config.out_path, root / 'results')

    def test_dump(self):
        with tempfile.TemporaryDirectory() as root:
            path = pathlib.Path(root) / 'specattn.yml'
            config = Config()
            config.decode(vec_cfg_yaml)
            config.dump(path)
            self.assertEqual(Config.load(path), config)

    def test_ensure_dir(self):
        with tempfile.TemporaryDirectory() as root:
            root = pathlib.Path(root)
            test1 = root / 'test1'
            test2 = root / 'test2'
            innocent = test2 / 'innocent.txt'
            nest1 = root / 'nest1'
            nest2 = nest1 / 'nest2'

            self.assertFalse(test1.exists())
            _ensure_dir_exists(test1)
            self.assertTrue(test1.exists())

            test2.mkdir()
            innocent.write_text('hello world')
            _ensure_dir_exists(test2)
            self.assertTrue(innocent.exists())

            _ensure_dir_exists(nest2)
            self.assertTrue(nest1.exists())
            self.assertTrue(nest2.exists())

            with self.assertRaises(FileExistsError):
                _ensure_dir_exists(innocent)


if __name__ == "__main__":
    from specattn import logutils
    logutils.autoconfig()
    unittest.main()
