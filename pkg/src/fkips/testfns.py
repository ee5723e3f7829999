"""Fixed dictionary of oscillation-1 test functions.

Supremum distances over all oscillation-1 functions are not computable, so
every empirical distance in this package is taken over this deterministic
dictionary: singleton indicators, sub-level indicators, centered ramps and
a fixed pseudorandom fill, all shifted to midrange zero so each entry has
oscillation exactly 1 and sup norm 1/2.  The dictionary depends only on the
state dimension and requested size.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

_DICT_KEY = np.uint64(0xD1C7D1C7D1C7D1C7)

DEFAULT_DICTIONARY_SIZE = 32


def _center(v: np.ndarray) -> np.ndarray | None:
    spread = v.max() - v.min()
    if spread <= 0:
        return None
    v = v / spread
    return v - (v.max() + v.min()) / 2.0


def osc1_dictionary(dim: int, size: int = DEFAULT_DICTIONARY_SIZE) -> np.ndarray:
    """(size, dim) array of centered oscillation-1 per-state tables."""
    if dim < 2:
        raise InputError("the dictionary needs at least two states")
    if size < 1:
        raise InputError("dictionary size must be >= 1")
    rows = []

    def push(v):
        c = _center(np.asarray(v, dtype=np.float64))
        if c is not None and len(rows) < size:
            rows.append(c)

    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        push(e)
    for j in range(1, dim):
        push((np.arange(dim) < j).astype(np.float64))
    push(np.arange(dim, dtype=np.float64))
    push(-np.arange(dim, dtype=np.float64))
    push(np.arange(dim, dtype=np.float64) ** 2)
    rng = np.random.Generator(np.random.Philox(key=np.array([_DICT_KEY, _DICT_KEY])))
    while len(rows) < size:
        push(rng.random(dim))
    return np.array(rows[:size])
