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
import unittest

import numpy as np

from specattn.config import SpecConfig
from specattn.config import SelectionConfig
from specattn.layermap import LayerMapping
from specattn.model import prefill
from specattn.model import greedy_decode
from specattn.select import DensePolicy
from specattn.select import NucleusPolicy
from specattn.select import StreamingPolicy
from specattn.select import CsrMask

from specattn.specdecode import RoundRecord
from specattn.specdecode import draft_phase
from specattn.specdecode import verify_phase
from specattn.specdecode import check_acceptance
from specattn.specdecode import generate

from specattn.exceptions import GenerationError
from specattn.exceptions import ContextOverflow
from specattn.exceptions import MaskMismatch
from specattn.exceptions import MappingError


# ###############################################
# Fixtures and vectors
# ###############################################


from _fixtures.models import toy_pair
from _fixtures.models import random_prompts


MAPPING_2_4 = LayerMapping([0, 0, 1, 1], 0.0, 2)
MAPPING_4_8 = LayerMapping([0, 0, 1, 1, 2, 2, 3, 3], 0.0, 4)


def _spec(gamma=4, max_tokens=16, p=0.95, dense_prefix_layers=1, **kwargs):
    return SpecConfig(
        gamma = gamma,
        max_tokens = max_tokens,
        selection = SelectionConfig(
            p = p,
            dense_prefix_layers = dense_prefix_layers
        ),
        **kwargs
    )


# ###############################################
# Testing
# ###############################################


class AcceptanceTest(unittest.TestCase):
    def test_vectors(self):
        self.assertEqual(check_acceptance([1, 2, 3], [1, 2, 3, 4]), 3)
        self.assertEqual(check_acceptance([1, 2, 3], [0, 2, 3, 4]), 0)
        self.assertEqual(check_acceptance([1, 2, 3, 4], [1, 2, 5, 4, 9]), 2)
        self.assertEqual(check_acceptance([], [7]), 0)


class PhaseTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.draft, cls.verifier = toy_pair(2, 4)

    def test_draft_is_greedy(self):
        prompt = list(b'phase one')
        for gamma in (1, 3, 6):
            cache = self.draft.new_cache()
            prefill(self.draft, prompt[:-1], cache)
            tokens, steps = draft_phase(self.draft, cache, prompt[-1], gamma)
            with self.subTest(gamma=gamma):
                self.assertEqual(len(tokens), gamma)
                self.assertEqual(len(steps), gamma)
                self.assertEqual(cache.length, len(prompt) - 1 + gamma)
                self.assertEqual(
                    tokens,
                    greedy_decode(self.draft, prompt, gamma)[len(prompt):]
                )

    def test_self_agreement(self):
        prompt = list(b'agree')
        cache_d = self.verifier.new_cache()
        cache_v = self.verifier.new_cache()
        prefill(self.verifier, prompt[:-1], cache_d)
        prefill(self.verifier, prompt[:-1], cache_v)

        drafts, __ = draft_phase(self.verifier, cache_d, prompt[-1], 4)
        verified, steps = verify_phase(self.verifier, cache_v, prompt[-1],
                                       drafts)
        self.assertEqual(len(verified), 5)
        self.assertEqual(verified[:4], drafts)
        self.assertEqual(cache_v.length, len(prompt) - 1 + 5)

    def test_full_masks_bit_identical(self):
        prompt = list(b'full masks')
        base = len(prompt) - 1
        drafts = [5, 6, 7]

        dense_cache = self.verifier.new_cache()
        prefill(self.verifier, prompt[:-1], dense_cache)
        dense_tokens, dense_steps = verify_phase(
            self.verifier, dense_cache, prompt[-1], drafts
        )

        n_cols = base + len(drafts) + 1
        rows = np.tril(np.ones((len(drafts) + 1, n_cols), dtype=bool),
                       k=base)
        masks = [CsrMask.from_rows(rows)] * self.verifier.n_layers
        masked_cache = self.verifier.new_cache()
        prefill(self.verifier, prompt[:-1], masked_cache)
        masked_tokens, masked_steps = verify_phase(
            self.verifier, masked_cache, prompt[-1], drafts, masks=masks
        )

        self.assertEqual(dense_tokens, masked_tokens)
        for dense, masked in zip(dense_steps, masked_steps):
            self.assertTrue(np.array_equal(dense.logits, masked.logits))

    def test_mask_mismatch(self):
        cache = self.verifier.new_cache()
        prefill(self.verifier, b'mismatch', cache)
        rows = np.ones((3, 10), dtype=bool)
        with self.assertRaises(MaskMismatch):
            verify_phase(self.verifier, cache, 1, [2, 3],
                         masks=[CsrMask.from_rows(rows)] * 3)
        with self.assertRaises(MaskMismatch):
            verify_phase(self.verifier, cache, 1, [2, 3],
                         masks=[CsrMask.from_rows(rows)] * 4)


class GenerateTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.draft, cls.verifier = toy_pair(2, 4)

    def test_lossless_dense(self):
        draft, verifier = toy_pair(4, 8, d_model=64, n_heads=4)
        for ii, prompt in enumerate(random_prompts(100, seed=1)):
            gamma = (1, 3, 4, 6)[ii % 4]
            cfg = _spec(gamma=gamma, max_tokens=12)
            output, __ = generate(draft, verifier, MAPPING_4_8, prompt, cfg,
                                  policy=DensePolicy())
            with self.subTest(prompt=ii, gamma=gamma):
                self.assertEqual(output, greedy_decode(verifier, prompt, 12))

    def test_lossless_full_mass(self):
        ''' With p = 1 every position carrying draft attention is kept,
        so the masks are full and verification is exactly dense.
        '''
        for ii, prompt in enumerate(random_prompts(10, seed=2)):
            for dense_prefix_layers in (0, 4):
                cfg = _spec(gamma=3, max_tokens=10, p=1.0,
                            dense_prefix_layers=dense_prefix_layers)
                output, rounds = generate(self.draft, self.verifier,
                                          MAPPING_2_4, prompt, cfg)
                with self.subTest(prompt=ii, prefix=dense_prefix_layers):
                    self.assertEqual(output,
                                     greedy_decode(self.verifier, prompt, 10))
                    for record in rounds:
                        for counts, length in zip(record.selected_counts,
                                                  record.row_lengths):
                            self.assertEqual(counts, [length] * 4)

    def test_self_drafting(self):
        ''' A verifier drafting for itself accepts every draft. '''
        mapping = LayerMapping.identity(4)
        cfg = _spec(gamma=1, max_tokens=10, p=1.0)
        output, rounds = generate(self.verifier, self.verifier, mapping,
                                  list(b'self'), cfg)
        self.assertEqual(len(rounds), 5)
        for record in rounds:
            self.assertEqual(record.n_accepted, 1)
            self.assertEqual(len(record.emitted), 2)
        self.assertEqual(output, greedy_decode(self.verifier, b'self', 10))

    def test_round_bookkeeping(self):
        prompt = list(b'bookkeeping')
        output, rounds = generate(self.draft, self.verifier, MAPPING_2_4,
                                  prompt, _spec(gamma=4, max_tokens=20,
                                                p=0.8))
        self.assertEqual(len(output), len(prompt) + 20)
        self.assertEqual(rounds[0].cache_length_before, len(prompt) - 1)

        emitted = []
        for previous, record in zip(rounds, rounds[1:]):
            self.assertEqual(record.cache_length_before,
                             previous.cache_length_after)
        for record in rounds:
            self.assertLessEqual(record.n_accepted, 4)
            self.assertEqual(len(record.verifier_tokens), 5)
            self.assertEqual(len(record.selected_counts), 5)
            kept = min(record.n_accepted, len(record.emitted))
            self.assertEqual(record.draft_tokens[:kept],
                             record.emitted[:kept])
            self.assertEqual(record.cache_length_after,
                             record.cache_length_before +
                             len(record.emitted))
            for counts, length in zip(record.selected_counts,
                                      record.row_lengths):
                self.assertEqual(counts[0], length)
                for count in counts[1:]:
                    self.assertLessEqual(count, length)
            emitted.extend(record.emitted)
        self.assertEqual(prompt + emitted, output)

    def test_deterministic(self):
        cfg = _spec(gamma=3, max_tokens=12, p=0.8)
        first = generate(self.draft, self.verifier, MAPPING_2_4,
                         list(b'again'), cfg)
        second = generate(self.draft, self.verifier, MAPPING_2_4,
                          list(b'again'), cfg)
        self.assertEqual(first[0], second[0])
        self.assertEqual([r.entranscode() for r in first[1]],
                         [r.entranscode() for r in second[1]])

    def test_eos(self):
        prompt = list(b'eos')
        reference = greedy_decode(self.verifier, prompt, 12)
        eos = reference[len(prompt) + 4]
        cfg = _spec(gamma=3, max_tokens=12, eos_token=eos)
        output, __ = generate(self.draft, self.verifier, MAPPING_2_4, prompt,
                              cfg, policy=DensePolicy())
        self.assertEqual(output, greedy_decode(self.verifier, prompt, 12,
                                               eos_token=eos))
        self.assertEqual(output[-1], eos)

    def test_no_tokens(self):
        cfg = _spec()
        cfg.max_tokens = 0
        output, rounds = generate(self.draft, self.verifier, MAPPING_2_4,
                                  [1, 2, 3], cfg)
        self.assertEqual(output, [1, 2, 3])
        self.assertEqual(rounds, [])

    def test_empty_prompt(self):
        with self.assertRaises(GenerationError):
            generate(self.draft, self.verifier, MAPPING_2_4, [], _spec())

    def test_single_token_prompt(self):
        output, __ = generate(self.draft, self.verifier, MAPPING_2_4, [65],
                              _spec(max_tokens=6), policy=DensePolicy())
        self.assertEqual(output, greedy_decode(self.verifier, [65], 6))

    def test_other_policies(self):
        policy = StreamingPolicy(2, 4, dense_prefix_layers=1)
        output, rounds = generate(self.draft, self.verifier, None,
                                  list(b'streaming policy'), _spec(),
                                  policy=policy)
        self.assertEqual(len(output), len(b'streaming policy') + 16)

        policy = NucleusPolicy(SelectionConfig(p=0.9), MAPPING_2_4)
        output, __ = generate(self.draft, self.verifier, MAPPING_2_4,
                              list(b'nucleus'), _spec(), policy=policy)
        self.assertEqual(len(output), len(b'nucleus') + 16)

    def test_mapping_mismatch(self):
        with self.assertRaises(MappingError):
            generate(self.draft, self.verifier, LayerMapping.identity(4),
                     list(b'mismatch'), _spec())

    def test_context_overflow(self):
        draft, verifier = toy_pair(1, 2, max_seq=16)
        prompt = list(b'overflowing')
        with self.assertRaises(GenerationError) as ctx:
            generate(draft, verifier, LayerMapping([0, 0], 0.0, 1), prompt,
                     _spec(gamma=4, max_tokens=50))

        exc = ctx.exception
        self.assertIsInstance(exc.__cause__, ContextOverflow)
        self.assertEqual(exc.output[:len(prompt)], prompt)
        self.assertGreater(len(exc.output), len(prompt))
        self.assertTrue(exc.rounds)

    def test_gamma_capped_near_limit(self):
        draft, verifier = toy_pair(1, 2, max_seq=16)
        prompt = list(b'near the end')
        output, rounds = generate(draft, verifier, None, prompt,
                                  _spec(gamma=4, max_tokens=4),
                                  policy=DensePolicy())
        self.assertEqual(output, greedy_decode(verifier, prompt, 4))


class RoundRecordTest(unittest.TestCase):
    def test_jsonl(self):
        record = RoundRecord(
            draft_tokens = [1, 2],
            verifier_tokens = [1, 3, 4],
            n_accepted = 1,
            emitted = [1, 3],
            selected_counts = [[5, 3], [6, 4], [7, 5]],
            row_lengths = [5, 6, 7],
            cache_length_before = 4,
            cache_length_after = 6
        )
        line = record.to_jsonl()
        self.assertNotIn('\n', line)
        self.assertEqual(RoundRecord.from_json(json.loads(line)), record)


if __name__ == "__main__":
    from specattn import logutils
    logutils.autoconfig()
    unittest.main()
