"""Counter-based Gaussian streams.

Every normal draw is a pure function of ``(master_seed, purpose, stream_id,
draw_index)``.  The bit source is Philox4x32-10 (Salmon et al., SC'11): the
64-bit master seed is the Philox key and the counter packs the draw block, the
purpose tag and the 64-bit stream id.  Each 128-bit block yields two normals
through a 128-layer ziggurat (Marsaglia & Tsang 2000, in Doornik's 2005 form); the rare rejections
retry on counters tagged with the attempt number.

Because nothing is sequential, any subset of streams or draw windows can be
generated in any order (or concurrently) with bit-identical results.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ContractError

__all__ = [
    "RngStreamSpec",
    "PURPOSE_INCREMENTS",
    "PURPOSE_BRIDGE",
    "philox4x32",
    "stream_normals",
    "block_normals",
]

UINT64_MAX = 2**64 - 1

# Purpose tags keep independent uses of one stream on disjoint counters.
PURPOSE_INCREMENTS = 0
PURPOSE_BRIDGE = 1

_MASK32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_TWO_POW_M53 = 1.0 / 9007199254740992.0


@dataclass(frozen=True)
class RngStreamSpec:
    """Identifies one reproducible Gaussian stream (one sample path)."""

    master_seed: int
    stream_id: int

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) <= UINT64_MAX:
                raise ContractError(f"{name} must be an unsigned 64-bit integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    def normals(self, count, purpose=PURPOSE_INCREMENTS, start=0):
        """Draws ``start .. start+count-1`` of this stream as a 1D array."""
        return stream_normals(self.master_seed, [self.stream_id], count, purpose, start)[0]


@numba.njit(cache=True, inline="always")
def _philox_rounds(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK32
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK32
        c0 = (hi1 ^ c1 ^ k0) & _MASK32
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK32
        c3 = lo0
        k0 = (k0 + _PHILOX_W0) & _MASK32
        k1 = (k1 + _PHILOX_W1) & _MASK32
    return c0, c1, c2, c3


@numba.njit(cache=True)
def philox4x32(counter, key):
    """Philox4x32-10 block function on uint64-held 32-bit words."""
    c0, c1, c2, c3 = _philox_rounds(
        np.uint64(counter[0]) & _MASK32,
        np.uint64(counter[1]) & _MASK32,
        np.uint64(counter[2]) & _MASK32,
        np.uint64(counter[3]) & _MASK32,
        np.uint64(key[0]) & _MASK32,
        np.uint64(key[1]) & _MASK32,
    )
    out = np.empty(4, dtype=np.uint64)
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3
    return out


# Ziggurat tables (128 layers, Doornik's ZIGNOR layout).
_ZIG_R = 3.442619855899
_ZIG_V = 9.91256303526217e-3


def _ziggurat_tables(layers=128):
    x = np.zeros(layers + 1)
    f = np.exp(-0.5 * _ZIG_R * _ZIG_R)
    x[0] = _ZIG_V / f
    x[1] = _ZIG_R
    for i in range(2, layers):
        x[i] = np.sqrt(-2.0 * np.log(_ZIG_V / x[i - 1] + f))
        f = np.exp(-0.5 * x[i] * x[i])
    return x, x[1:] / x[:-1]


_ZIG_X, _ZIG_RATIO = _ziggurat_tables()


@numba.njit(cache=True, inline="always")
def _words(seed, tag, stream, block):
    return _philox_rounds(
        block & _MASK32,
        tag & _MASK32,
        stream & _MASK32,
        stream >> np.uint64(32),
        seed & _MASK32,
        seed >> np.uint64(32),
    )


@numba.njit(cache=True, inline="always")
def _u53(a, b):
    # 32 bits of a, top 21 bits of b; the low 7 bits of b pick the layer.
    return (np.int64(a) * 2097152 + np.int64(b >> np.uint64(11)) + 0.5) * _TWO_POW_M53


@numba.njit(cache=True)
def _ziggurat_slow(a, b, seed, purpose, stream, block, half):
    # Retries draw on counters tagged with the attempt number in bits 24..31 of
    # the purpose word, so every draw stays a function of its own counter.
    attempt = np.uint64(0)
    while True:
        u = 2.0 * _u53(a, b) - 1.0
        i = np.int64(b & np.uint64(127))
        if abs(u) < _ZIG_RATIO[i]:
            return u * _ZIG_X[i]
        attempt += np.uint64(1)
        tag = purpose | (attempt << np.uint64(24))
        y0, y1, y2, y3 = _words(seed, tag | np.uint64(1 << 23), stream, block)
        v = _u53(y0, y1) if half == 0 else _u53(y2, y3)
        if i == 0:
            k = np.uint64(0)
            while True:
                t0, t1, t2, t3 = _words(seed, tag | np.uint64(1 << 22) | (k << np.uint64(8)), stream, block)
                if half == 0:
                    p = _u53(t0, t1)
                    q = _u53(t2, t3)
                else:
                    p = _u53(t2, t3)
                    q = _u53(t0, t1)
                x = np.log(p) / _ZIG_R
                y = np.log(q)
                if -2.0 * y >= x * x:
                    return (x - _ZIG_R) if u < 0.0 else (_ZIG_R - x)
                k += np.uint64(1)
        x = u * _ZIG_X[i]
        f0 = np.exp(-0.5 * (_ZIG_X[i] * _ZIG_X[i] - x * x))
        f1 = np.exp(-0.5 * (_ZIG_X[i + 1] * _ZIG_X[i + 1] - x * x))
        if f1 + v * (f0 - f1) < 1.0:
            return x
        z0, z1, z2, z3 = _words(seed, tag, stream, block)
        if half == 0:
            a = z0
            b = z1
        else:
            a = z2
            b = z3


@numba.njit(cache=True, inline="always")
def _zig(a, b, seed, purpose, stream, block, half):
    u = 2.0 * _u53(a, b) - 1.0
    i = np.int64(b & np.uint64(127))
    if abs(u) < _ZIG_RATIO[i]:
        return u * _ZIG_X[i]
    return _ziggurat_slow(a, b, seed, purpose, stream, block, half)


@numba.njit(cache=True, inline="always")
def _normal_pair(seed, purpose, stream, block):
    """Draws ``2*block`` and ``2*block + 1`` of a stream."""
    x0, x1, x2, x3 = _words(seed, purpose, stream, block)
    return (
        _zig(x0, x1, seed, purpose, stream, block, 0),
        _zig(x2, x3, seed, purpose, stream, block, 1),
    )


@numba.njit(cache=True)
def _fill(seed, purpose, streams, start, out):
    count = out.shape[1]
    for p in range(streams.shape[0]):
        stream = streams[p]
        i = 0
        draw = start
        if draw & 1 and count > 0:
            out[p, 0] = _normal_pair(seed, purpose, stream, np.uint64(draw >> 1))[1]
            i = 1
            draw += 1
        while i + 1 < count:
            z0, z1 = _normal_pair(seed, purpose, stream, np.uint64(draw >> 1))
            out[p, i] = z0
            out[p, i + 1] = z1
            i += 2
            draw += 2
        if i < count:
            out[p, i] = _normal_pair(seed, purpose, stream, np.uint64(draw >> 1))[0]
    return out


def _check_purpose(purpose):
    # bits 8 and up of the purpose word are reserved for ziggurat retries
    if not 0 <= int(purpose) < 256:
        raise ContractError(f"purpose must lie in [0, 256), got {purpose}")
    return np.uint64(int(purpose))


def _as_u64(value, name):
    value = int(value)
    if not 0 <= value <= UINT64_MAX:
        raise ContractError(f"{name} must be an unsigned 64-bit integer, got {value}")
    return np.uint64(value)


def stream_normals(master_seed, stream_ids, count, purpose=PURPOSE_INCREMENTS, start=0):
    """Standard normals for several streams.

    Parameters
    ----------
    master_seed : int
        64-bit master seed (the Philox key).
    stream_ids : sequence of int
        One row of output per stream id.
    count : int
        Number of draws per stream.
    purpose : int
        Tag separating independent uses of the same stream.
    start : int
        Index of the first draw, so a stream can be consumed in windows.

    Returns
    -------
    ndarray, shape (len(stream_ids), count)
    """
    if count < 0 or start < 0:
        raise ContractError("count and start must be nonnegative")
    streams = np.asarray([int(s) for s in np.atleast_1d(stream_ids)], dtype=np.uint64)
    out = np.empty((streams.shape[0], int(count)), dtype=np.float64)
    if count == 0 or streams.shape[0] == 0:
        return out
    return _fill(_as_u64(master_seed, "master_seed"), _check_purpose(purpose), streams, int(start), out)


def block_normals(master_seed, first_stream, n_streams, count, purpose=PURPOSE_INCREMENTS, start=0):
    """Same as :func:`stream_normals` for the contiguous ids ``first_stream + arange(n_streams)``."""
    if first_stream < 0 or first_stream + n_streams - 1 > UINT64_MAX:
        raise ContractError("stream ids must stay within 64 bits")
    streams = np.arange(n_streams, dtype=np.uint64) + np.uint64(first_stream)
    out = np.empty((int(n_streams), int(count)), dtype=np.float64)
    if count == 0 or n_streams == 0:
        return out
    return _fill(_as_u64(master_seed, "master_seed"), _check_purpose(purpose), streams, int(start), out)
