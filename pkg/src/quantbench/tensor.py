"""Dense float64 tensors, the deterministic RNG, and the array ops the layers need.

Everything here is pure: operations return new values and never mutate their
inputs. All arithmetic is carried out in 64-bit floats; reduced precision in
this package only ever applies to stored weight values, never to arithmetic.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)


class Tensor:
    """Immutable dense N-dimensional array of float64 values.

    Data is stored flat in row-major (C) order. Constructing from existing
    values always copies, so a Tensor never aliases caller-owned memory.
    """

    __slots__ = ("_a",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        a = np.array(values, dtype=np.float64, order="C", copy=True)
        if shape is not None:
            a = a.reshape(tuple(shape))
        self._a = a
        self._a.flags.writeable = False

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        # No-copy constructor for arrays we exclusively own.
        t = object.__new__(cls)
        a = np.ascontiguousarray(array, dtype=np.float64)
        a.flags.writeable = False
        t._a = a
        return t

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls._wrap(np.zeros(tuple(shape), dtype=np.float64))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def size(self) -> int:
        return self._a.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values (read-only)."""
        return self._a.reshape(-1)

    @property
    def ndarray(self) -> np.ndarray:
        """Read-only ndarray view of the values."""
        return self._a

    def tolist(self):
        return self._a.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Rng:
    """Deterministic counter-based pseudo-random generator.

    The i-th raw output (i starting at 1) is ``mix(seed + i * GAMMA) mod 2^64``
    with ``GAMMA = 0x9E3779B97F4A7C15`` and ``mix`` the finalizer

        z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
        z ^= z >> 27;  z *= 0x94D049BB133111EB
        z ^= z >> 31

    (all operations modulo 2^64). This is pure integer arithmetic, so a given
    seed reproduces the identical sequence on every platform; the platform
    default generator is never used. Counter-based output also lets a block of
    draws be produced in one vectorized call.
    """

    __slots__ = ("seed", "_counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ValueError("n must be non-negative")
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            z = (np.uint64(self.seed) + idx * _GAMMA) & _MASK64
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9) & _MASK64
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB) & _MASK64
            z = z ^ (z >> np.uint64(31))
        return z

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform float64 draws in [low, high), shaped ``shape``."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard normal draws via the Box-Muller transform."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        half = (n + 1) // 2
        u = (self.next_u64(2 * half) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1 = 1.0 - u[:half]  # (0, 1]; keeps log() finite
        u2 = u[half:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting raw 64-bit keys."""
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def spawn(self, tag: str) -> "Rng":
        """Independent child stream derived from this seed and a string tag."""
        return Rng(derive_seed(self.seed, tag))


def derive_seed(seed: int, tag: str) -> int:
    """Stable 64-bit sub-seed from a base seed and a label.

    Uses FNV-1a over the tag bytes folded into the seed; avoids Python's
    salted hash() so derived seeds are identical across runs and platforms.
    """
    h = 0xCBF29CE484222325
    for b in tag.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    z = (seed ^ h) & 0xFFFFFFFFFFFFFFFF
    # One mixing round so tag/seed bits diffuse.
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m x k] and b [k x n], accumulated in float64."""
    if a.ndarray.ndim != 2 or b.ndarray.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    return Tensor._wrap(a.ndarray @ b.ndarray)


def _im2col(x: np.ndarray, ksize: int, pad: int) -> np.ndarray:
    """Unfold a padded [N, C, H, W] batch into patch rows.

    Returns [N, H*W, C*ksize*ksize] where row (i, j) holds the receptive
    field of output pixel j of sample i, channel-major then row-major within
    the kernel window.
    """
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    cols = np.empty((n, c, ksize, ksize, h, w), dtype=np.float64)
    for dy in range(ksize):
        for dx in range(ksize):
            cols[:, :, dy, dx] = xp[:, :, dy : dy + h, dx : dx + w]
    return cols.reshape(n, c * ksize * ksize, h * w).transpose(0, 2, 1)


def _col2im(dcols: np.ndarray, shape: tuple, ksize: int, pad: int) -> np.ndarray:
    """Adjoint of _im2col: fold patch-row gradients back onto the input."""
    n, c, h, w = shape
    dcols = dcols.transpose(0, 2, 1).reshape(n, c, ksize, ksize, h, w)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for dy in range(ksize):
        for dx in range(ksize):
            dxp[:, :, dy : dy + h, dx : dx + w] += dcols[:, :, dy, dx]
    return dxp[:, :, pad : pad + h, pad : pad + w]


def conv2d(x: Tensor, kernels: Tensor, pad: int = 2) -> Tensor:
    """Same-size 2-D cross-correlation of one sample with a 5x5 kernel bank.

    ``x`` is [C_in, H, W]; ``kernels`` is [C_out, C_in, 5, 5]. Borders are
    zero-padded by ``pad`` (2 keeps the spatial size), and kernels are applied
    without flipping.
    """
    xa, ka = x.ndarray, kernels.ndarray
    if xa.ndim != 3:
        raise DimensionError(f"conv2d input must be [C, H, W], got {x.shape}")
    if ka.ndim != 4 or ka.shape[2:] != (5, 5):
        raise DimensionError(
            f"conv2d kernels must be [C_out, C_in, 5, 5], got {kernels.shape}"
        )
    if ka.shape[1] != xa.shape[0]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs kernels {kernels.shape}"
        )
    c_out = ka.shape[0]
    _, h, w = xa.shape
    cols = _im2col(xa[None], 5, pad)[0]  # [H*W, C_in*25]
    out = cols @ ka.reshape(c_out, -1).T  # [H*W, C_out]
    return Tensor._wrap(out.T.reshape(c_out, h, w))


def _maxpool2_batch(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pooling over [N, C, H, W] with argmax bookkeeping.

    Odd trailing rows/columns form 1-wide windows. Ties resolve to the
    smallest flat index within [C, H, W] of each sample. Returns the pooled
    batch and int64 argmax positions flattened per sample.
    """
    n, c, h, w = x.shape
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    hp, wp = 2 * h2, 2 * w2
    xp = np.full((n, c, hp, wp), -np.inf, dtype=np.float64)
    xp[:, :, :h, :w] = x
    # Window cells enumerated in source row-major order so argmax's
    # first-occurrence rule picks the smallest flat index on ties.
    windows = xp.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h2, w2, 4)
    local = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(h2)[None, None, :, None] + local // 2
    cols = 2 * np.arange(w2)[None, None, None, :] + local % 2
    chan = np.arange(c)[None, :, None, None]
    flat = (chan * h + rows) * w + cols
    return out, flat.astype(np.int64)


def maxpool2(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """Max-pool one [C, H, W] sample; see _maxpool2_batch for the rules."""
    xa = x.ndarray
    if xa.ndim != 3:
        raise DimensionError(f"maxpool2 input must be [C, H, W], got {x.shape}")
    out, idx = _maxpool2_batch(xa[None])
    return Tensor._wrap(out[0]), idx[0]
