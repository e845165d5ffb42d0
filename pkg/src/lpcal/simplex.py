"""Geometry of the discretized probability simplex.

A *level set* is the cell of the coordinatewise floor-rounding of the simplex
at granularity ``1/lam``.  We represent a level set by its tuple of integer
numerators over the common denominator ``lam``, which makes bins exact (and
hashable) dictionary keys: ``(n_1, ..., n_k)`` stands for the grid vector
``(n_1/lam, ..., n_k/lam)``.

Not every grid vector is reachable by rounding a distribution down.  The
reachable family is sparse: a grid vector is reachable iff

    sum(n) <= lam   and   sum(n) + k > lam,

because the half-open witness box ``prod_i [n_i/lam, (n_i+1)/lam)`` intersects
the simplex exactly under those inequalities (the equal-spread witness
``v + d/k * 1`` with ``d = 1 - sum(v)`` realizes the intersection).  The
family therefore has at most ``C(lam+k, k)`` members, polynomial in ``k`` for
fixed ``lam`` and vice versa.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EnumerationCapError, MembershipError

# A level set: integer numerators over the common denominator lam.
Level = tuple[int, ...]

# Coordinates within SNAP of a grid point round as if exactly on it; keeps
# floor-rounding stable for inputs like (1/3, 1/3, 1/3) that only reach the
# grid up to float rounding.
SNAP = 1e-9

PROB_ATOL = 1e-9

DEFAULT_ENUM_CAP = 5_000_000


def check_prob_vector(u: np.ndarray, *, atol: float = PROB_ATOL) -> None:
    """Raise ValueError unless ``u`` is a probability vector within ``atol``."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("probability vector must be 1-d and nonempty")
    if np.any(u < -atol) or np.any(u > 1.0 + atol):
        raise ValueError(f"coordinates outside [0,1]: {u}")
    s = float(u.sum())
    if abs(s - 1.0) > atol:
        raise ValueError(f"coordinates sum to {s}, not 1")


def round_down(u: Sequence[float] | np.ndarray, lam: int) -> Level:
    """Floor every coordinate of ``u`` to a multiple of ``1/lam``.

    Returns the level set as numerators.  Total on any vector with
    coordinates in [0,1]; for a probability vector the result is always a
    reachable level set.
    """
    if lam < 1:
        raise ValueError("lam must be a positive integer")
    return tuple(min(int(math.floor(x * lam + SNAP)), lam) for x in u)


def level_coords(v: Level, lam: int) -> np.ndarray:
    """Grid coordinates ``n_i/lam`` of a level set."""
    return np.asarray(v, dtype=float) / lam


def is_member(v: Level, lam: int) -> bool:
    """Whether some probability vector rounds down to ``v``.

    Closed form: sum(n) <= lam and sum(n) + k > lam, with every numerator in
    {0, ..., lam}.  Exact integer arithmetic, no search.
    """
    k = len(v)
    if k == 0:
        return False
    if any(n < 0 or n > lam for n in v):
        return False
    s = sum(v)
    return s <= lam and s + k > lam


def canonical(v: Level, lam: int) -> np.ndarray:
    """The canonical distribution of a level set.

    Spreads the rounding deficit ``d = 1 - sum(v)`` equally over all
    coordinates: ``u = v + (d/k) * 1``.  This attains the minimal possible
    sup-norm distance ``d/k`` from ``v`` among distributions rounding down to
    ``v`` (any witness must absorb the whole deficit, so some coordinate
    moves by at least ``d/k``), and it rounds back to ``v`` because
    ``d/k < 1/lam`` for every member.
    """
    if not is_member(v, lam):
        raise MembershipError(f"{v} is not a level set for lam={lam}")
    k = len(v)
    d = (lam - sum(v)) / lam
    return np.asarray(v, dtype=float) / lam + d / k


def project_simplex(z: Sequence[float] | np.ndarray) -> np.ndarray:
    """Euclidean projection of ``z`` onto the probability simplex.

    Sort-and-threshold characterization: the projection is
    ``max(z - theta, 0)`` where ``theta`` is the unique shift making the
    positive part sum to 1.  O(k log k); ties in the sort do not affect the
    output.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("input must be a 1-d nonempty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("input must be finite")
    w = np.sort(z)[::-1]
    css = np.cumsum(w)
    idx = np.arange(1, z.size + 1)
    support = np.nonzero(w - (css - 1.0) / idx > 0)[0]
    rho = support[-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(z - theta, 0.0)


def level_count(lam: int, k: int) -> int:
    """Exact number of reachable level sets.

    Counts grid vectors with ``max(0, lam-k+1) <= sum(n) <= lam``; for sums
    ``s <= lam`` the per-coordinate cap never binds, so each sum contributes
    ``C(s+k-1, k-1)`` vectors.
    """
    if lam < 1 or k < 1:
        raise ValueError("lam and k must be positive integers")
    lo = max(0, lam - k + 1)
    return sum(math.comb(s + k - 1, k - 1) for s in range(lo, lam + 1))


def enumerate_levels(lam: int, k: int, cap: int = DEFAULT_ENUM_CAP) -> list[Level]:
    """All reachable level sets, in lexicographic order on numerators.

    Refuses (EnumerationCapError) when the ``C(lam+k, k)`` bound exceeds
    ``cap``, a sign the parameters are infeasible for explicit enumeration.
    """
    if lam < 1 or k < 1:
        raise ValueError("lam and k must be positive integers")
    bound = math.comb(lam + k, k)
    if bound > cap:
        raise EnumerationCapError(
            f"C({lam + k},{k}) = {bound} exceeds enumeration cap {cap}"
        )
    out: list[Level] = []
    prefix = [0] * k

    def rec(i: int, remaining: int) -> None:
        # remaining = lam - sum(prefix[:i]); prune branches that cannot reach
        # the membership window sum(n) > lam - k.
        if i == k:
            if remaining < k:  # sum(n) + k > lam
                out.append(tuple(prefix))
            return
        max_tail = remaining  # later coordinates sum to at most `remaining`
        for n in range(0, max_tail + 1):
            # even with a full tail, sums stay <= lam; only the lower window
            # can fail, checked at the leaf.
            prefix[i] = n
            rec(i + 1, remaining - n)
        prefix[i] = 0

    rec(0, lam)
    return out


def iter_box_witnesses(v: Level, lam: int, grid: int) -> Iterator[np.ndarray]:
    """Yield the points of the witness box of ``v`` on the ``1/grid`` grid.

    Test helper for brute-force oracles; ``grid`` must be a multiple of
    ``lam``.
    """
    if grid % lam != 0:
        raise ValueError("grid must be a multiple of lam")
    step = grid // lam

    def rec(i: int, acc: list[int]) -> Iterator[np.ndarray]:
        if i == len(v):
            if sum(acc) == grid:
                yield np.asarray(acc, dtype=float) / grid
            return
        lo = v[i] * step
        hi = min(lo + step - 1, grid)
        for a in range(lo, hi + 1):
            yield from rec(i + 1, acc + [a])

    yield from rec(0, [])
