'''
LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------

'''

import math
import unittest

import numpy as np

from specattn.numerics import softmax
from specattn.numerics import dense_attention
from specattn.numerics import sparse_attention_postmask
from specattn.numerics import masked_error_bound
from specattn.numerics import nll_from_logits
from specattn.numerics import log_softmax

from specattn.exceptions import NumericsError


# ###############################################
# Fixtures and vectors
# ###############################################


from _fixtures.oracles import loop_attention


def _random_qkv(rng, length, d):
    q = rng.normal(size=(1, d))
    k = rng.normal(size=(length, d))
    v = rng.normal(size=(length, d))
    return q, k, v


# ###############################################
# Testing
# ###############################################


class SoftmaxTest(unittest.TestCase):
    def test_vectors(self):
        np.testing.assert_allclose(softmax([0, 0, 0]), [1 / 3] * 3,
                                   rtol=0, atol=1e-15)
        np.testing.assert_allclose(
            softmax([math.log(1), math.log(2), math.log(3)]),
            [1 / 6, 2 / 6, 3 / 6],
            rtol = 0,
            atol = 1e-15
        )
        for x in (-1e300, -3.5, 0.0, 42.0, 1e300):
            with self.subTest(x=x):
                self.assertEqual(softmax([x]).tolist(), [1.0])

    def test_large_logits(self):
        w = softmax([1000.0, 1001.0])
        self.assertTrue(np.isfinite(w).all())
        self.assertAlmostEqual(float(w.sum()), 1.0, places=15)
        self.assertGreater(w[1], w[0])

    def test_errors(self):
        with self.assertRaises(NumericsError):
            softmax([])
        with self.assertRaises(NumericsError):
            softmax([0.0, np.nan])
        with self.assertRaises(NumericsError):
            softmax([0.0, np.inf])

    def test_log_softmax(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(scale=5, size=17)
        rows = log_softmax(logits)
        self.assertAlmostEqual(float(np.exp(rows).sum()), 1.0, places=12)
        for target in (0, 5, 16):
            with self.subTest(target=target):
                self.assertAlmostEqual(nll_from_logits(logits, target),
                                       -float(rows[target]), places=12)


class DenseAttentionTest(unittest.TestCase):
    def test_single_key(self):
        rng = np.random.default_rng(0)
        q, k, v = _random_qkv(rng, 1, 4)
        out, w = dense_attention(q, k, v)
        self.assertEqual(w.tolist(), [1.0])
        np.testing.assert_array_equal(out[0], v[0])

    def test_orthogonal_query(self):
        q = np.array([[1.0, 0.0]])
        k = np.array([[0.0, 1.0], [0.0, -2.0]])
        v = np.array([[2.0, 4.0], [6.0, -8.0]])
        out, w = dense_attention(q, k, v)
        np.testing.assert_allclose(w, [0.5, 0.5])
        np.testing.assert_allclose(out[0], 0.5 * (v[0] + v[1]))

    def test_against_scalar_loop(self):
        rng = np.random.default_rng(11)
        for length, d in ((3, 4), (1, 2), (17, 8), (64, 16)):
            with self.subTest(length=length, d=d):
                q, k, v = _random_qkv(rng, length, d)
                out, w = dense_attention(q, k, v)
                ref_out, ref_w = loop_attention(q[0].tolist(), k.tolist(),
                                                v.tolist())
                np.testing.assert_allclose(out[0], ref_out, rtol=0,
                                           atol=1e-12)
                np.testing.assert_allclose(w, ref_w, rtol=0, atol=1e-12)

    def test_shape_errors(self):
        rng = np.random.default_rng(0)
        q, k, v = _random_qkv(rng, 3, 4)
        with self.assertRaises(NumericsError):
            dense_attention(q, k[:, :3], v)
        with self.assertRaises(NumericsError):
            dense_attention(q, k, v[:2])
        with self.assertRaises(NumericsError):
            dense_attention(q, k[:0], v[:0])
        with self.assertRaises(NumericsError):
            dense_attention(np.vstack([q, q]), k, v)


class SparseAttentionTest(unittest.TestCase):
    def test_full_mask_is_dense(self):
        rng = np.random.default_rng(5)
        for length in (1, 2, 9, 40):
            q, k, v = _random_qkv(rng, length, 8)
            mask = np.ones(length, dtype=bool)
            dense, __ = dense_attention(q, k, v)
            for renormalize in (False, True):
                with self.subTest(length=length, renormalize=renormalize):
                    sparse = sparse_attention_postmask(q, k, v, mask,
                                                       renormalize)
                    self.assertTrue(np.array_equal(dense, sparse))

    def test_equal_logits(self):
        q = np.zeros((1, 2))
        k = np.array([[1.0, 2.0], [3.0, 4.0]])
        v = np.array([[1.0, -1.0], [5.0, 7.0]])
        mask = np.array([True, False])

        out = sparse_attention_postmask(q, k, v, mask, renormalize=False)
        np.testing.assert_allclose(out[0], 0.5 * v[0])
        out = sparse_attention_postmask(q, k, v, mask, renormalize=True)
        np.testing.assert_allclose(out[0], v[0])

    def test_empty_support(self):
        rng = np.random.default_rng(0)
        q, k, v = _random_qkv(rng, 4, 4)
        mask = np.zeros(4, dtype=bool)
        out = sparse_attention_postmask(q, k, v, mask)
        self.assertEqual(out.tolist(), [[0.0] * 4])
        with self.assertRaises(NumericsError):
            sparse_attention_postmask(q, k, v, mask, renormalize=True)

    def test_renormalized_is_dense_on_subset(self):
        rng = np.random.default_rng(8)
        q, k, v = _random_qkv(rng, 12, 4)
        mask = rng.random(12) < 0.5
        mask[3] = True
        out = sparse_attention_postmask(q, k, v, mask, renormalize=True)
        ref, __ = dense_attention(q, k[mask], v[mask])
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-13)

    def test_mask_length(self):
        rng = np.random.default_rng(0)
        q, k, v = _random_qkv(rng, 4, 4)
        with self.assertRaises(NumericsError):
            sparse_attention_postmask(q, k, v, np.ones(3, dtype=bool))


class ErrorBoundTest(unittest.TestCase):
    def test_vectors(self):
        v = np.array([[1.0, 0.0], [0.0, 2.0]])
        self.assertEqual(
            masked_error_bound([0.5, 0.5], [True, True], v), 0.0
        )
        self.assertAlmostEqual(
            masked_error_bound([0.5, 0.5], [True, False], v), 1.0
        )

    def test_unit_rows(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(10, 6))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        w = softmax(rng.normal(size=10))
        mask = rng.random(10) < 0.5
        self.assertAlmostEqual(masked_error_bound(w, mask, v),
                               float(w[~mask].sum()), places=12)

    def test_bound_holds(self):
        rng = np.random.default_rng(99)
        for trial in range(200):
            length = int(rng.integers(1, 50))
            q, k, v = _random_qkv(rng, length, 8)
            q *= rng.uniform(0.1, 4.0)
            mask = rng.random(length) < rng.uniform(0.1, 0.9)
            dense, w = dense_attention(q, k, v)
            sparse = sparse_attention_postmask(q, k, v, mask)
            error = float(np.linalg.norm(dense - sparse))
            with self.subTest(trial=trial):
                self.assertLessEqual(error,
                                     masked_error_bound(w, mask, v) + 1e-9)


if __name__ == "__main__":
    from specattn import logutils
    logutils.autoconfig()
    unittest.main()
