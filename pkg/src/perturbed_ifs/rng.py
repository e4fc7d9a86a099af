"""Counter-based random streams built on Philox4x32-10.

Every random number is a pure function of ``(seed, stream_id, block)``, so a
batch of replica streams can be advanced in lockstep with numpy and the
result never depends on how replicas are split across workers.

Layout of one Philox block:

* key words    ``(seed & 0xffffffff, seed >> 32)``
* counter words ``(block lo, block hi, stream lo, stream hi)``

Each block yields four 32-bit words, i.e. two 53-bit doubles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_LO = np.uint64(MASK32)
_SHIFT = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Vectorised Philox4x32 block function.

    ``counter`` has shape ``(..., 4)`` and ``key`` shape ``(..., 2)`` (both
    broadcastable, values < 2**32).  Returns uint32 words of shape ``(..., 4)``.
    """
    c = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    k0, k1 = k[..., 0], k[..., 1]
    for r in range(rounds):
        if r:
            k0 = (k0 + np.uint64(_W0)) & _LO
            k1 = (k1 + np.uint64(_W1)) & _LO
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _LO
        hi1, lo1 = p1 >> _SHIFT, p1 & _LO
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    out = np.stack(np.broadcast_arrays(c0, c1, c2, c3), axis=-1)
    return out.astype(np.uint32)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _words_to_doubles(words: np.ndarray) -> np.ndarray:
    # two 32-bit words -> one double in [0, 1) with 53 random bits
    w = words.astype(np.uint64)
    a = w[..., 0::2] >> np.uint64(5)
    b = w[..., 1::2] >> np.uint64(6)
    return (a.astype(np.float64) * 67108864.0 + b.astype(np.float64)) / 9007199254740992.0


@dataclass
class RngStream:
    """A deterministic random stream (or a lockstep batch of streams).

    ``stream_id`` is either a Python int (single stream) or a 1-D uint64 array
    (one stream per replica).  ``counter`` is the next unused block index and
    is shared by all streams of a batch.
    """

    seed: int
    stream_id: int | np.ndarray
    counter: int = 0
    _spawned: int = field(default=0, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        if isinstance(self.stream_id, np.ndarray):
            self.stream_id = self.stream_id.astype(np.uint64)
        else:
            if not 0 <= int(self.stream_id) <= MASK64:
                raise ValueError("stream_id must be a 64-bit unsigned integer")
            self.stream_id = int(self.stream_id)

    @property
    def is_batch(self) -> bool:
        return isinstance(self.stream_id, np.ndarray)

    def __len__(self) -> int:
        return len(self.stream_id) if self.is_batch else 1

    def _ids(self) -> np.ndarray:
        if self.is_batch:
            return self.stream_id
        return np.array([self.stream_id], dtype=np.uint64)

    def raw_blocks(self, nblocks: int) -> np.ndarray:
        """Next ``nblocks`` Philox blocks, shape ``(n_streams, nblocks, 4)``."""
        ids = self._ids()
        blocks = np.arange(self.counter, self.counter + nblocks, dtype=np.uint64)
        ctr = np.empty((len(ids), nblocks, 4), dtype=np.uint64)
        ctr[..., 0] = (blocks & _LO)[None, :]
        ctr[..., 1] = (blocks >> _SHIFT)[None, :]
        ctr[..., 2] = (ids & _LO)[:, None]
        ctr[..., 3] = (ids >> _SHIFT)[:, None]
        key = np.array([self.seed & MASK32, self.seed >> 32], dtype=np.uint64)
        self.counter += nblocks
        return philox4x32(ctr, key)

    def uniform(self, size: int | None = None) -> np.ndarray | float:
        """Doubles in [0, 1).

        Single stream: scalar (``size=None``) or shape ``(size,)``.
        Batch: shape ``(n_streams,)`` or ``(n_streams, size)``.
        Consumes ``ceil(size / 2)`` blocks per stream.
        """
        k = 1 if size is None else int(size)
        words = self.raw_blocks((k + 1) // 2).reshape(len(self), -1)
        u = _words_to_doubles(words)[:, :k]
        if size is None:
            u = u[:, 0]
        if not self.is_batch:
            u = u[0]
            return float(u) if size is None else u
        return u

    def spawn(self, n: int) -> RngStream:
        """A batch of ``n`` child streams; replica ``i`` gets id ``base + i``.

        ``base`` is a hash of this stream's id and its spawn count, with the
        low 32 bits cleared, so children of different spawns never overlap.
        """
        if self.is_batch:
            raise ValueError("spawn is defined for single streams only")
        if not 0 < n < 2**32:
            raise ValueError("can spawn between 1 and 2**32 - 1 streams")
        base = splitmix64(splitmix64(self.stream_id) ^ (self._spawned + 1)) & ~MASK32 & MASK64
        self._spawned += 1
        ids = np.uint64(base) + np.arange(n, dtype=np.uint64)
        return RngStream(self.seed, ids)

    def subset(self, lo: int, hi: int) -> RngStream:
        """Streams ``lo:hi`` of a batch, sharing the current counter."""
        if not self.is_batch:
            raise ValueError("subset is defined for batches only")
        return RngStream(self.seed, self.stream_id[lo:hi].copy(), self.counter)


def rng_stream(seed: int, stream_id: int = 0) -> RngStream:
    return RngStream(seed, stream_id)
