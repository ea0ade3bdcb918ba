'''
Small model pairs and corpora shared by the test suites.

LICENSING
-------------------------------------------------

specattn: speculative sparse attention at desk scale.
    Copyright (C) 2026 specattn contributors

    This is free and unencumbered software released into the public
    domain. See LICENSE.txt for details.

------------------------------------------------------

'''

import numpy as np

from specattn.config import ModelConfig
from specattn.model import init_model


TOY_SEED = 7

# Repeating prose keeps the byte statistics stable between runs.
_CORPUS_TEXT = (
    b'The draft proposes and the verifier disposes. A small model reads '
    b'ahead, a large model checks its work, and the cache remembers what '
    b'both have seen. Attention that the small model ignores is attention '
    b'the large model can skip. '
)


def toy_config(n_layers=4, seed=TOY_SEED, d_model=16, n_heads=2, max_seq=256,
               vocab=256):
    return ModelConfig(
        n_layers = n_layers,
        n_heads = n_heads,
        d_model = d_model,
        vocab = vocab,
        max_seq = max_seq,
        seed = seed
    )


def toy_model(n_layers=4, **kwargs):
    return init_model(toy_config(n_layers, **kwargs))


def toy_pair(draft_layers=2, verifier_layers=4, **kwargs):
    ''' A draft and a verifier sharing seed and width. The draft is the
    verifier truncated to its first draft_layers layers.
    '''
    return (toy_model(draft_layers, **kwargs),
            toy_model(verifier_layers, **kwargs))


def toy_corpus(length):
    repeats = length // len(_CORPUS_TEXT) + 1
    return (_CORPUS_TEXT * repeats)[:length]


def random_tokens(rng, length, vocab=256):
    return [int(token) for token in rng.integers(0, vocab, size=length)]


def random_prompts(count, seed=0, min_length=1, max_length=12):
    rng = np.random.default_rng(seed)
    return [random_tokens(rng, int(rng.integers(min_length, max_length + 1)))
            for __ in range(count)]
