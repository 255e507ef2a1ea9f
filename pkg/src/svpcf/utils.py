"""Small shared helpers: exact rounding and seed derivation."""

from __future__ import annotations

import hashlib
import math
from fractions import Fraction
from numbers import Real

import numpy as np


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    # repr() of a float is the shortest decimal that round-trips, so
    # 12.3 becomes exactly 123/10 rather than its binary neighbour.
    return Fraction(repr(float(x)))


def round_half_up(x) -> int:
    """Round to nearest integer, halves going up (``2.5 -> 3``)."""
    return math.floor(_exact(x) + Fraction(1, 2))


def scaled_count(percent: Real, n: int) -> int:
    """``round_half_up(percent / 100 * n)`` evaluated in exact arithmetic."""
    return round_half_up(_exact(percent) * n / 100)


def budget(percent: Real, n: int) -> int:
    """Number of interactions a ``percent``% subsample of ``n`` must keep."""
    if not 0 < float(percent) <= 100:
        raise ValueError(f"percent must lie in (0, 100], got {percent}")
    return max(1, scaled_count(percent, n))


def derive_seed(root: int, *keys) -> int:
    """Stable child seed for ``keys`` under ``root``.

    Independent of call order and of the interpreter's hash randomisation,
    so any experiment cell can be re-derived on its own.
    """
    text = "\x1f".join([str(int(root))] + [str(k) for k in keys])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(root: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))
