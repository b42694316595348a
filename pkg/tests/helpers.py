"""Shared oracles for the model tests and the acceptance suite."""
import itertools

import numpy as np

from plugs.features import IMAGE_DIM, ObjectLabelTable, make_item
from plugs.gradcheck import gradient_check
from plugs.model import Example, batch_loss, init_params, preset
from plugs.world import SyntheticWorld


def table_step_fn(V, max_len, seed):
    """Random next-token log-probabilities, fixed per prefix."""
    rng = np.random.default_rng(seed)
    table = {}
    for n in range(max_len):
        for prefix in itertools.product(range(V), repeat=n):
            z = rng.standard_normal(V) * 2.0
            table[prefix] = z - np.log(np.exp(z).sum())

    def step(prefixes):
        return np.stack([table[tuple(p)] for p in prefixes])

    return step


def exhaustive(step_fn, eos, V, max_len):
    """Argmax over every sequence that ends at eos or at max_len."""
    best = None

    def walk(seq, score):
        nonlocal best
        if seq and (seq[-1] == eos or len(seq) == max_len):
            key = (-score, tuple(seq), len(seq))
            if best is None or key < best[0]:
                best = (key, list(seq))
            return
        logp = step_fn([seq])[0]
        for tok in range(V):
            walk(seq + [tok], score + float(logp[tok]))

    walk([], 0.0)
    return best[1]


def random_model_loss(seed, vocab_size=40, dtype=np.float64):
    """A float64 desk_tiny loss closure over random params and a random 2-item batch.

    Every encoder block is present: image, labels, language id and source text.
    """
    cfg = preset("desk_tiny", vocab_size)
    params = init_params(cfg, seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1000)
    table = ObjectLabelTable.random(range(20), seed)
    batch = []
    for b in range(2):
        item = make_item(rng.standard_normal(IMAGE_DIM), rng.choice(20, size=3 + b, replace=False),
                         ["fr", "de"][b], rng.integers(14, vocab_size, size=4))
        target = [(4, 6)[b]] + list(rng.integers(14, vocab_size, size=5 - b)) + [1]
        batch.append(Example(item, tuple(target)))
    return params, lambda: batch_loss(params, cfg, table, batch, pad_id=0)


def gradcheck_random_model(seed, max_coords=2):
    params, fn = random_model_loss(seed)
    return gradient_check(fn, params, epsilon=1e-5, tolerance=1e-4, max_coords=max_coords,
                          rng=np.random.default_rng(seed))
