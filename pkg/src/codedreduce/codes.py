"""Cyclic gradient codes: encoding matrices and survivor-set decoding.

An encoding matrix ``B`` is n x n with row ``i`` supported on the cyclic
window of columns ``{i, ..., i+s} mod n`` (0-based).  Worker ``i`` computes
the ``B[i]``-weighted combination of the ``n`` data partitions; a parent that
hears back from any ``n - s`` workers recovers the plain sum by solving for
a combining row ``a`` with ``a @ B = 1``.

Construction: draw an ``s x n`` matrix ``H`` whose columns sum to zero
(first ``n - 1`` columns standard normal, last the negated sum).  Each row of
``B`` gets a leading 1 on its first support column and the remaining ``s``
entries from the linear system that puts the row in the null space of ``H``.
Since the all-ones vector is also in that null space, any ``n - s`` rows
almost surely span it.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DECODE_TOL",
    "EncodingMatrix",
    "DecodeRow",
    "CodeConstructionError",
    "DecodeError",
    "build_encoding",
    "decode_row",
    "validate_code",
    "find_decode_failure",
    "save_matrix_csv",
    "load_matrix_csv",
]

DECODE_TOL = 1e-8
# Residuals above this (but under DECODE_TOL) suggest a poorly conditioned
# solve; warn rather than fail.
_WARN_RESIDUAL = 1e-10
_MAX_ATTEMPTS = 8


class CodeConstructionError(RuntimeError):
    pass


class DecodeError(RuntimeError):
    def __init__(self, survivors: frozenset[int], residual: float):
        self.survivors = survivors
        self.residual = residual
        super().__init__(
            f"survivor set {sorted(survivors)} cannot recover the sum "
            f"(residual {residual:.3e} > {DECODE_TOL:.0e})"
        )


def _support(i: int, s: int, n: int) -> tuple[int, ...]:
    return tuple((i + t) % n for t in range(s + 1))


@dataclass(frozen=True)
class EncodingMatrix:
    """n x n coding matrix with cyclic row support; tolerates s stragglers."""

    n: int
    s: int
    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not 0 <= self.s < self.n:
            raise ValueError(f"need 0 <= s < n, got n={self.n}, s={self.s}")
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (self.n, self.n):
            raise ValueError(f"expected shape {(self.n, self.n)}, got {entries.shape}")
        for i in range(self.n):
            outside = np.ones(self.n, dtype=bool)
            outside[list(_support(i, self.s, self.n))] = False
            if np.any(entries[i, outside] != 0.0):
                raise ValueError(f"row {i} has entries outside its cyclic support")
        object.__setattr__(self, "entries", entries)

    @property
    def k(self) -> int:
        """Partition count; fixed equal to n so the cyclic support is canonical."""
        return self.n

    def row_support(self, i: int) -> tuple[int, ...]:
        return _support(i, self.s, self.n)


@dataclass(frozen=True)
class DecodeRow:
    """Combining coefficients for one survivor set: zero off the set, a @ B = 1."""

    coefficients: np.ndarray = field(repr=False)
    survivor_set: frozenset[int]


def _try_build(n: int, s: int, seed: int) -> EncodingMatrix:
    rng = np.random.default_rng(seed)
    H = np.empty((s, n))
    H[:, : n - 1] = rng.standard_normal((s, n - 1))
    H[:, n - 1] = -H[:, : n - 1].sum(axis=1)
    B = np.zeros((n, n))
    for i in range(n):
        cols = _support(i, s, n)
        B[i, cols[0]] = 1.0
        x = np.linalg.solve(H[:, list(cols[1:])], -H[:, cols[0]])
        B[i, list(cols[1:])] = x
    for i in range(n):
        if np.any(B[i, list(_support(i, s, n))] == 0.0):
            # A zero inside a support window would break the equal-load
            # placement downstream; measure-zero, treat like a singular draw.
            raise np.linalg.LinAlgError("zero entry on support")
    return EncodingMatrix(n=n, s=s, entries=B)


def build_encoding(n: int, s: int, seed: int) -> EncodingMatrix:
    """Generate an encoding matrix for (n, s) from a seeded normal draw.

    Singular intermediate systems (a measure-zero event) trigger a redraw
    with seed+1; gives up after 8 attempts.
    """
    if not 0 <= s < n:
        raise ValueError(f"need 0 <= s < n, got n={n}, s={s}")
    if s == 0:
        return EncodingMatrix(n=n, s=0, entries=np.eye(n))
    for attempt in range(_MAX_ATTEMPTS):
        try:
            B = _try_build(n, s, seed + attempt)
        except np.linalg.LinAlgError:
            continue
        if validate_code(B):
            return B
    raise CodeConstructionError(
        f"no valid encoding matrix for (n={n}, s={s}) after {_MAX_ATTEMPTS} attempts"
    )


def decode_row(B: EncodingMatrix, survivors) -> DecodeRow:
    """Minimum-norm combining row over the surviving workers (0-based indices).

    Solves a @ B[survivors] = 1 and embeds the solution into length n with
    zeros elsewhere.  Raises DecodeError when the residual exceeds the decode
    tolerance, i.e. when the survivor set cannot reproduce the plain sum.
    """
    F = sorted(set(int(i) for i in survivors))
    if any(i < 0 or i >= B.n for i in F):
        raise ValueError(f"survivor indices {F} outside [0, {B.n})")
    if len(F) < B.n - B.s:
        raise ValueError(f"need at least {B.n - B.s} survivors, got {len(F)}")
    sub = B.entries[F, :]
    ones = np.ones(B.n)
    coeff, *_ = np.linalg.lstsq(sub.T, ones, rcond=None)
    residual = float(np.max(np.abs(coeff @ sub - ones)))
    if residual > DECODE_TOL:
        raise DecodeError(frozenset(F), residual)
    if residual > _WARN_RESIDUAL:
        warnings.warn(
            f"decode residual {residual:.3e} for survivors {F} passes tolerance "
            "but indicates ill-conditioning",
            stacklevel=2,
        )
    full = np.zeros(B.n)
    full[F] = coeff
    return DecodeRow(coefficients=full, survivor_set=frozenset(F))


def find_decode_failure(B: EncodingMatrix):
    """First survivor set of size n-s that cannot decode, or None if all can."""
    for F in itertools.combinations(range(B.n), B.n - B.s):
        try:
            decode_row(B, F)
        except DecodeError as err:
            return err.survivors, err.residual
    return None


def validate_code(B: EncodingMatrix) -> bool:
    """True iff every survivor set of size exactly n-s can recover the sum."""
    return find_decode_failure(B) is None


def save_matrix_csv(B: EncodingMatrix, path) -> None:
    """Dump as CSV: first line `n,s`, then n rows in full-precision decimal."""
    with open(path, "w") as fh:
        fh.write(f"{B.n},{B.s}\n")
        for row in B.entries:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrix_csv(path) -> EncodingMatrix:
    with open(path) as fh:
        n, s = (int(tok) for tok in fh.readline().split(","))
        rows = [[float(tok) for tok in line.split(",")] for line in fh if line.strip()]
    return EncodingMatrix(n=n, s=s, entries=np.array(rows))
