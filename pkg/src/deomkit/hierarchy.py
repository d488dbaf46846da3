"""Multi-index bookkeeping and storage for the hierarchy of DDOs.

A state of the hierarchy is a family of dim_s x dim_s matrices rho_n
labelled by occupation vectors n = (n_1, ..., n_K) with tier
|n| = sum_k n_k <= L.  Indices are enumerated graded-lexicographically
(by tier, then within a tier with the leading slot greedy), which keeps
each tier contiguous so per-tier reductions are cheap slices.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import ConfigError

__all__ = [
    "index_count",
    "enumerate_multi_indices",
    "raise_index",
    "lower_index",
    "conjugate_index",
    "DDOStore",
    "save_checkpoint",
    "load_checkpoint",
]

#: Refuse to build index spaces larger than this (override per call).
MAX_INDEX_COUNT = 10_000_000


def index_count(n_modes, max_tier):
    """Number of occupation vectors with K slots and tier <= L."""
    return comb(max_tier + n_modes, n_modes)


def _compositions(total, slots):
    # leading slot greedy: (total,0,..), (total-1,1,..), ...
    if slots == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for rest in _compositions(total - head, slots - 1):
            yield (head,) + rest


def enumerate_multi_indices(n_modes, max_tier, max_count=MAX_INDEX_COUNT):
    """All occupation vectors with tier <= max_tier, graded-lex ordered.

    Raises
    ------
    ConfigError
        If the index space exceeds ``max_count`` (with the sizing math in
        the message so the caller can renegotiate K or L).
    """
    if n_modes < 1:
        raise ConfigError(f"need at least one mode, got {n_modes}")
    if max_tier < 0:
        raise ConfigError(f"max_tier must be >= 0, got {max_tier}")
    total = index_count(n_modes, max_tier)
    if total > max_count:
        raise ConfigError(
            f"index space C({max_tier}+{n_modes},{n_modes}) = {total} "
            f"exceeds the cap {max_count}; reduce the tier cutoff or the "
            "number of modes"
        )
    out = []
    for tier in range(max_tier + 1):
        out.extend(_compositions(tier, n_modes))
    return out


def raise_index(occ, k, max_tier):
    """occ with slot k incremented, or None if that leaves the truncation."""
    if sum(occ) + 1 > max_tier:
        return None
    return occ[:k] + (occ[k] + 1,) + occ[k + 1:]


def lower_index(occ, k):
    """occ with slot k decremented, or None if the slot is empty."""
    if occ[k] == 0:
        return None
    return occ[:k] + (occ[k] - 1,) + occ[k + 1:]


def conjugate_index(occ, bar):
    """Permute occupations by the conjugate-mode involution."""
    return tuple(occ[bar[k]] for k in range(len(occ)))


def _ordering_hash(indices):
    h = hashlib.sha256()
    for occ in indices:
        h.update(",".join(map(str, occ)).encode())
        h.update(b";")
    return h.hexdigest()


@dataclass
class DDOStore:
    """Dense storage for every DDO in the truncated index space.

    ``data[i]`` is the matrix for ``indices[i]``.  Neighbor tables map an
    index position and mode slot to the raised/lowered position, with -1
    marking a neighbor outside the space (treated as zero by the
    equations of motion).
    """

    n_modes: int
    max_tier: int
    dim_s: int
    indices: list = field(repr=False)
    position: dict = field(repr=False)
    occupations: np.ndarray = field(repr=False)   # (N, K) int64
    tiers: np.ndarray = field(repr=False)         # (N,)
    tier_slices: list = field(repr=False)
    raise_table: np.ndarray = field(repr=False)   # (N, K) intp, -1 = outside
    lower_table: np.ndarray = field(repr=False)
    data: np.ndarray = field(repr=False)          # (N, d, d) complex

    @classmethod
    def create(cls, n_modes, max_tier, dim_s, max_count=MAX_INDEX_COUNT):
        indices = enumerate_multi_indices(n_modes, max_tier, max_count)
        position = {occ: i for i, occ in enumerate(indices)}
        n = len(indices)
        occupations = np.array(indices, dtype=np.int64).reshape(n, n_modes)
        tiers = occupations.sum(axis=1)
        tier_slices = []
        start = 0
        for tier in range(max_tier + 1):
            width = comb(tier + n_modes - 1, n_modes - 1)
            tier_slices.append(slice(start, start + width))
            start += width
        raise_table = np.full((n, n_modes), -1, dtype=np.intp)
        lower_table = np.full((n, n_modes), -1, dtype=np.intp)
        for i, occ in enumerate(indices):
            for k in range(n_modes):
                up = raise_index(occ, k, max_tier)
                if up is not None:
                    raise_table[i, k] = position[up]
                dn = lower_index(occ, k)
                if dn is not None:
                    lower_table[i, k] = position[dn]
        data = np.zeros((n, dim_s, dim_s), dtype=complex)
        return cls(n_modes=n_modes, max_tier=max_tier, dim_s=dim_s,
                   indices=indices, position=position,
                   occupations=occupations, tiers=tiers,
                   tier_slices=tier_slices, raise_table=raise_table,
                   lower_table=lower_table, data=data)

    def __len__(self):
        return len(self.indices)

    @property
    def rho0(self):
        """Tier-0 matrix (the reduced system state)."""
        return self.data[0]

    def copy(self):
        twin = DDOStore(n_modes=self.n_modes, max_tier=self.max_tier,
                        dim_s=self.dim_s, indices=self.indices,
                        position=self.position, occupations=self.occupations,
                        tiers=self.tiers, tier_slices=self.tier_slices,
                        raise_table=self.raise_table,
                        lower_table=self.lower_table, data=self.data.copy())
        return twin

    def blank_like(self):
        twin = self.copy()
        twin.data[:] = 0.0
        return twin

    def matrix(self, occ):
        return self.data[self.position[tuple(occ)]]

    def conjugate_permutation(self, bar):
        """Positions of the bar-permuted indices, as an array."""
        key = tuple(int(b) for b in bar)
        cache = getattr(self, "_conj_perm_cache", None)
        if cache is None:
            cache = {}
            self._conj_perm_cache = cache
        if key not in cache:
            perm = np.empty(len(self.indices), dtype=np.intp)
            for i, occ in enumerate(self.indices):
                perm[i] = self.position[conjugate_index(occ, key)]
            cache[key] = perm
        return cache[key]

    def hermiticity_defect(self, bar):
        """max_n || rho_n^dagger - rho_{bar(n)} ||_F over the store."""
        perm = self.conjugate_permutation(bar)
        diff = np.conj(np.transpose(self.data, (0, 2, 1))) - self.data[perm]
        return float(np.sqrt((np.abs(diff) ** 2).sum(axis=(1, 2))).max())

    def frobenius_norms(self):
        # overflow to inf is fine here: divergence checks feed on it
        with np.errstate(over="ignore"):
            return np.sqrt((np.abs(self.data) ** 2).sum(axis=(1, 2)))

    def ordering_hash(self):
        return _ordering_hash(self.indices)


def save_checkpoint(store, path):
    """Text checkpoint: header line + one row of re/im pairs per DDO.

    Floats are written with 17 significant digits, which round-trips
    float64 exactly.
    """
    header = {
        "format": "ddo-checkpoint",
        "version": 1,
        "n_modes": store.n_modes,
        "max_tier": store.max_tier,
        "dim_s": store.dim_s,
        "count": len(store),
        "ordering_sha256": store.ordering_hash(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        flat = store.data.reshape(len(store), -1)
        for row in flat:
            parts = []
            for z in row:
                parts.append("%.17g" % z.real)
                parts.append("%.17g" % z.imag)
            fh.write(" ".join(parts) + "\n")


def load_checkpoint(path, max_count=MAX_INDEX_COUNT):
    """Rebuild a store from :func:`save_checkpoint` output."""
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "ddo-checkpoint" or header.get("version") != 1:
            raise ConfigError(f"not a version-1 ddo-checkpoint: {path}")
        store = DDOStore.create(header["n_modes"], header["max_tier"],
                                header["dim_s"], max_count=max_count)
        if store.ordering_hash() != header["ordering_sha256"]:
            raise ConfigError(
                "checkpoint ordering hash does not match this enumeration; "
                "file was written with an incompatible index order"
            )
        if header["count"] != len(store):
            raise ConfigError("checkpoint count disagrees with its own header")
        d = store.dim_s
        for i in range(len(store)):
            vals = np.array(fh.readline().split(), dtype=float)
            if vals.size != 2 * d * d:
                raise ConfigError(f"checkpoint row {i} is malformed")
            store.data[i] = (vals[0::2] + 1j * vals[1::2]).reshape(d, d)
    return store
