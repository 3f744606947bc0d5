"""Independent reference computations used by the tests.

Nothing here imports the package under test.
"""
import itertools

import mpmath as mp
import numpy as np

mp.mp.dps = 60


def bessel_j_series(n, x, terms=200):
    """Ascending power series for J_n, summed in 60-digit arithmetic."""
    x = mp.mpf(x)
    return float(sum((-1) ** k * (x / 2) ** (2 * k + n) / (mp.factorial(k) * mp.factorial(k + n))
                     for k in range(terms)))


def bessel_y_series(n, x, terms=200):
    """Neumann series for Y_n (log term, finite sum, digamma sum)."""
    x = mp.mpf(x)
    t = x / 2
    jn = sum((-1) ** k * t ** (2 * k + n) / (mp.factorial(k) * mp.factorial(k + n))
             for k in range(terms))
    s1 = 2 / mp.pi * jn * mp.log(t)
    s2 = sum(mp.factorial(n - k - 1) / mp.factorial(k) * t ** (2 * k - n) for k in range(n)) / mp.pi
    s3 = sum((-1) ** k * (mp.digamma(k + 1) + mp.digamma(n + k + 1)) * t ** (2 * k + n)
             / (mp.factorial(k) * mp.factorial(n + k)) for k in range(terms)) / mp.pi
    return float(s1 - s2 - s3)


def disk_offsets(r):
    return {(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1) if di * di + dj * dj <= r * r}


def brute_dilate(b, r):
    """Set dilation: cells within a disk offset of any set cell, clipped to the grid."""
    H, W = b.shape
    out = np.zeros_like(b, dtype=bool)
    pts = list(zip(*np.nonzero(b)))
    for (i, j) in pts:
        for di, dj in disk_offsets(r):
            if 0 <= i + di < H and 0 <= j + dj < W:
                out[i + di, j + dj] = True
    return out


def brute_erode(b, r):
    """Set erosion: cells whose whole disk neighbourhood lies in the set (outside = background)."""
    H, W = b.shape
    out = np.zeros_like(b, dtype=bool)
    offs = disk_offsets(r)
    for i, j in itertools.product(range(H), range(W)):
        out[i, j] = all(0 <= i + di < H and 0 <= j + dj < W and b[i + di, j + dj] for di, dj in offs)
    return out


def central_difference(f, x, step=1e-5):
    """Gradient of scalar f at real array x by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        fp = f(x)
        x[idx] = old - step
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * step)
    return g


def bitmask_morphology(codes, n=5):
    """Dilation and erosion (r = 1 cross) of n x n maps encoded as integers.

    Bit ``i * n + j`` holds cell (i, j). Returns (dilated, eroded) codes.
    """
    codes = np.asarray(codes, dtype=np.uint64)
    full = np.uint64((1 << (n * n)) - 1)
    col0 = sum(1 << (i * n) for i in range(n))
    not_first = np.uint64(full ^ col0)
    not_last = np.uint64(full ^ (col0 << (n - 1)))
    nn = np.uint64(n)
    one = np.uint64(1)
    # value of the neighbour at (i+di, j+dj), zero when it falls off the grid
    up = (codes << nn) & full          # neighbour above: (i-1, j)
    down = codes >> nn                 # neighbour below: (i+1, j)
    left = (codes << one) & not_first  # neighbour (i, j-1)
    right = (codes >> one) & not_last  # neighbour (i, j+1)
    dil = codes | up | down | left | right
    ero = codes & up & down & left & right
    return dil, ero


def decode_maps(codes, n=5):
    codes = np.asarray(codes, dtype=np.uint64)
    bits = (codes[:, None] >> np.arange(n * n, dtype=np.uint64)[None, :]) & np.uint64(1)
    return bits.astype(bool).reshape(-1, n, n)
