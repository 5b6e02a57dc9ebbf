"""Cross-correlation of two photon streams over many decades of delay.

For every bin boundary ``e`` the kernel sweeps one pointer through stream B
while walking stream A, accumulating ``#{b < a + e}`` over all ``a``.
Differences of consecutive boundaries give the pair counts per bin, so the
cost is O((N_a + N_b) * n_edges) regardless of how many pairs fall in the
bins. Boundaries may be negative, which covers symmetric linear bins around
zero delay as well as logarithmic ones.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from numba import njit, prange

from .streams import TICKS_PER_SECOND, PhotonStream

__all__ = [
    "LogBinSpec",
    "G2Curve",
    "NoBunchingError",
    "make_log_bins",
    "make_linear_bins",
    "edges_to_ticks",
    "correlate",
    "correlate_bruteforce",
    "normalize",
    "plateau_level",
    "extract_tsd",
    "write_g2_csv",
    "read_g2_csv",
    "DEFAULT_ASYMPTOTE_WINDOW",
]

DEFAULT_ASYMPTOTE_WINDOW = (1.0, 10.0)
CSV_COLUMNS = ("tau_lo_s", "tau_hi_s", "g2", "raw", "err")


class NoBunchingError(ValueError):
    """Raised when a curve has no bunching plateau to decay from."""


@dataclass(frozen=True)
class LogBinSpec:
    tau_min: float
    tau_max: float
    bins_per_decade: int = 10

    def __post_init__(self):
        if not (0 < self.tau_min < self.tau_max) or not math.isfinite(self.tau_max):
            raise ValueError(f"need 0 < tau_min < tau_max, got {self.tau_min!r}, {self.tau_max!r}")
        if int(self.bins_per_decade) != self.bins_per_decade or self.bins_per_decade < 1:
            raise ValueError(f"bins_per_decade must be a positive integer, got {self.bins_per_decade!r}")


def make_log_bins(spec: LogBinSpec) -> np.ndarray:
    """Geometric edges ``tau_min * 10**(k / bins_per_decade)`` up to the first one >= tau_max."""
    bpd = int(spec.bins_per_decade)
    # the small slack keeps exact decade ratios from gaining a spurious edge
    n = int(math.ceil(bpd * math.log10(spec.tau_max / spec.tau_min) - 1e-9)) + 1
    return spec.tau_min * 10.0 ** (np.arange(n) / bpd)


def make_linear_bins(half_width: float, bin_width: float) -> np.ndarray:
    """Equal bins covering [-half_width, half_width], symmetric about zero delay."""
    if not (bin_width > 0) or not (half_width >= bin_width):
        raise ValueError("need 0 < bin_width <= half_width")
    n = int(math.ceil(half_width / bin_width - 1e-9))
    return np.arange(-n, n + 1) * bin_width


def edges_to_ticks(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2:
        raise ValueError("need at least two bin edges")
    ticks = np.rint(edges * TICKS_PER_SECOND).astype(np.int64)
    if not np.all(np.diff(ticks) > 0):
        raise ValueError("bin edges must be strictly ascending at 1 ps resolution")
    return ticks


EDGE_BLOCK = 16
_SENTINEL = np.iinfo(np.int64).max


@njit(cache=True)
def _cum_counts(a, bp, edges, lo, hi, out):
    # bp is stream B padded with sentinels, so the pointer never needs a bounds check
    ne = len(edges)
    ptr = np.zeros(EDGE_BLOCK, dtype=np.int64)
    acc = np.zeros(EDGE_BLOCK, dtype=np.int64)
    for k0 in range(0, ne, EDGE_BLOCK):
        kk = min(EDGE_BLOCK, ne - k0)
        for q in range(kk):
            ptr[q] = np.searchsorted(bp, a[lo] + edges[k0 + q])
            acc[q] = 0
        for i in range(lo, hi):
            ai = a[i]
            for q in range(kk):
                t = ai + edges[k0 + q]
                j = ptr[q]
                # two unconditional steps cover most advances without a branch
                j += bp[j] < t
                j += bp[j] < t
                while bp[j] < t:
                    j += 1
                ptr[q] = j
                acc[q] += j
        for q in range(kk):
            out[k0 + q] = acc[q]


@njit(parallel=True, cache=True)
def _correlate_chunks(a, bp, edges, n_chunks):
    n = len(a)
    cum = np.zeros((n_chunks, len(edges)), dtype=np.int64)
    for c in prange(n_chunks):
        lo = (n * c) // n_chunks
        hi = (n * (c + 1)) // n_chunks
        if hi > lo:
            _cum_counts(a, bp, edges, lo, hi, cum[c])
    return cum


def _as_ticks(s, name):
    ts = s.timestamps if isinstance(s, PhotonStream) else np.asarray(s)
    ts = np.ascontiguousarray(ts, dtype=np.int64)
    if ts.ndim != 1:
        raise ValueError(f"stream {name} must be one-dimensional")
    if ts.size > 1 and not np.all(ts[1:] >= ts[:-1]):
        raise ValueError(f"stream {name} is not sorted")
    return ts


def correlate(a, b, edges, threads: int = 1, symmetrize: bool = False) -> np.ndarray:
    """Pair counts ``#{(i, j): edges[k] <= b_j - a_i < edges[k+1]}``.

    Parameters
    ----------
    a, b : PhotonStream or int64 tick arrays
        Sorted detection times of the start and stop channel.
    edges : array_like
        Bin edges in seconds, strictly ascending; negative values allowed.
    threads : int
        Worker threads; the result is identical for any value.
    symmetrize : bool
        Also count pairs with the channels swapped, which doubles the
        statistics of a symmetric g2.
    """
    ta, tb = _as_ticks(a, "a"), _as_ticks(b, "b")
    if isinstance(a, PhotonStream) and isinstance(b, PhotonStream) and a.duration_ticks != b.duration_ticks:
        raise ValueError("streams must share the same duration")
    et = edges_to_ticks(edges)
    counts = _correlate_ticks(ta, tb, et, threads)
    if symmetrize:
        counts = counts + _correlate_ticks(tb, ta, et, threads)
    return counts


def _correlate_ticks(ta, tb, et, threads):
    if len(ta) == 0 or len(tb) == 0:
        return np.zeros(len(et) - 1, dtype=np.int64)
    threads = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    n_chunks = max(1, min(4 * threads, len(ta) // 1024 + 1))
    bp = np.concatenate([tb, np.full(4, _SENTINEL, dtype=np.int64)])
    prev = numba.get_num_threads()
    numba.set_num_threads(threads)
    try:
        cum = _correlate_chunks(ta, bp, et, n_chunks)
    finally:
        numba.set_num_threads(prev)
    return np.diff(cum.sum(axis=0))


def correlate_bruteforce(a, b, edges) -> np.ndarray:
    """Reference O(N_a * N_b) pair count, in blocks to bound memory."""
    ta, tb = _as_ticks(a, "a"), _as_ticks(b, "b")
    et = edges_to_ticks(edges)
    counts = np.zeros(len(et) - 1, dtype=np.int64)
    for s in range(0, len(ta), 512):
        d = (tb[None, :] - ta[s:s + 512, None]).ravel()
        d = d[(d >= et[0]) & (d < et[-1])]
        counts += np.bincount(np.searchsorted(et, d, side="right") - 1, minlength=len(counts))
    return counts


@dataclass(frozen=True, eq=False)
class G2Curve:
    """Normalized correlation histogram.

    ``stat_err`` is the 1-sigma error of ``g2``: Poisson counting noise,
    with empty bins counted as one, plus the extra scatter finite records
    give at delays that are a sizeable fraction of the acquisition.
    """

    bin_edges: np.ndarray
    g2: np.ndarray
    raw_counts: np.ndarray
    stat_err: np.ndarray
    norm_constant: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        g2 = np.asarray(self.g2, dtype=float)
        raw = np.asarray(self.raw_counts, dtype=np.int64)
        err = np.asarray(self.stat_err, dtype=float)
        for name, val in (("bin_edges", edges), ("g2", g2), ("raw_counts", raw), ("stat_err", err)):
            object.__setattr__(self, name, val)
        n = len(edges) - 1
        if n < 1 or not (len(g2) == len(raw) == len(err) == n):
            raise ValueError("g2, raw_counts and stat_err need one entry per bin")
        if np.any(g2 < 0) or np.any(err < 0):
            raise ValueError("g2 and stat_err must be nonnegative")
        if not (self.norm_constant > 0):
            raise ValueError("norm_constant must be positive")

    @property
    def tau_lo(self) -> np.ndarray:
        return self.bin_edges[:-1]

    @property
    def tau_hi(self) -> np.ndarray:
        return self.bin_edges[1:]

    @property
    def centers(self) -> np.ndarray:
        """Geometric bin centers for positive log bins, arithmetic otherwise."""
        lo, hi = self.tau_lo, self.tau_hi
        if np.all(lo > 0):
            return np.sqrt(lo * hi)
        return 0.5 * (lo + hi)

    def denominators(self) -> np.ndarray:
        """Expected counts of an uncorrelated pair of streams, times the norm."""
        raw = self.raw_counts
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(raw > 0, raw / np.where(self.g2 > 0, self.g2, 1.0), 1.0 / self.stat_err)


def _overlap_integral(lo, hi, duration):
    """Integral of (T - |tau|) over [lo, hi], clipped to |tau| <= T."""
    def prim(x):
        x = np.clip(x, -duration, duration)
        return duration * x - np.sign(x) * x * x / 2.0
    return prim(hi) - prim(lo)


def _coverage(x, lo, hi, duration, symmetric):
    g = np.clip(np.minimum(x + hi, duration) - np.maximum(x + lo, 0.0), 0.0, None)
    if symmetric:
        g = g + np.clip(np.minimum(x - lo, duration) - np.maximum(x - hi, 0.0), 0.0, None)
    return g


def _coverage_variance(lo, hi, duration, symmetric=False):
    """Variance over a uniform start time of the in-acquisition part of a delay window.

    Pair counts of uncorrelated streams of fixed size N_a, N_b scatter by
    ``N_a N_b (N_a + N_b - 2) * var / T^2`` beyond the Poisson term, since
    windows near the ends of the record are cut short.
    """
    lo = np.asarray(lo, dtype=float)[:, None]
    hi = np.asarray(hi, dtype=float)[:, None]
    full = (hi - lo) * (2.0 if symmetric else 1.0)
    pts = [np.zeros_like(lo), np.full_like(lo, duration), -lo, -hi, duration - lo, duration - hi]
    if symmetric:
        pts += [lo, hi, duration + lo, duration + hi]
    x = np.sort(np.clip(np.hstack(pts), 0.0, duration), axis=1)
    x0, x1 = x[:, :-1], x[:, 1:]
    # coverage is piecewise linear between breakpoints, so Simpson is exact
    d = [_coverage(v, lo, hi, duration, symmetric) - full for v in (x0, 0.5 * (x0 + x1), x1)]
    w = (x1 - x0) / 6.0
    m1 = np.sum(w * (d[0] + 4 * d[1] + d[2]), axis=1) / duration
    m2 = np.sum(w * (d[0] ** 2 + 4 * d[1] ** 2 + d[2] ** 2), axis=1) / duration
    return np.maximum(m2 - m1 * m1, 0.0)


def normalize(raw, edges, stream_a: PhotonStream, stream_b: PhotonStream, method: str = "asymptote",
              window: Optional[Sequence[float]] = DEFAULT_ASYMPTOTE_WINDOW,
              symmetrized: bool = False) -> G2Curve:
    """Turn raw pair counts into g2.

    ``poisson_rate`` divides by the counts two uncorrelated streams with the
    same totals would give, ``N_a N_b / T^2 * integral (T - |tau|)`` per bin;
    the overlap factor matters once delays reach a fair fraction of T.
    ``asymptote`` further divides by the inverse-variance weighted mean of the
    Poisson-normalized values over the bins that lie wholly inside
    ``window`` (seconds).

    ``stat_err`` combines the Poisson error of the counts with the extra
    variance pair counts of uncorrelated fixed-size records have, which
    dominates once ``(rate_a + rate_b) * bin_width * tau / T`` exceeds 1.
    """
    raw = np.asarray(raw, dtype=np.int64)
    edges = np.asarray(edges, dtype=float)
    if len(raw) != len(edges) - 1:
        raise ValueError("need one raw count per bin")
    if stream_a.duration_ticks != stream_b.duration_ticks or stream_a.duration_ticks <= 0:
        raise ValueError("streams must share a positive duration")
    duration = stream_a.duration
    na, nb = len(stream_a), len(stream_b)
    if na == 0 or nb == 0:
        raise ValueError("cannot normalize with an empty stream")
    den = na * nb / duration ** 2 * _overlap_integral(edges[:-1], edges[1:], duration)
    if symmetrized:
        den = 2.0 * den
    if np.any(den <= 0):
        raise ValueError("bins beyond the acquisition length cannot be normalized")

    if method == "poisson_rate":
        norm = 1.0
    elif method == "asymptote":
        if window is None:
            window = DEFAULT_ASYMPTOTE_WINDOW
        w_lo, w_hi = window
        sel = (edges[:-1] >= w_lo * (1 - 1e-12)) & (edges[1:] <= w_hi * (1 + 1e-12))
        if sel.sum() < 3:
            raise ValueError(f"asymptote window [{w_lo:g}, {w_hi:g}] s holds fewer than 3 bins")
        if raw[sel].sum() == 0:
            raise ValueError("no counts in the asymptote window")
        norm = raw[sel].sum() / den[sel].sum()
    else:
        raise ValueError(f"unknown normalization {method!r}")

    scaled = den * norm
    excess = na * nb * (na + nb - 2.0) * _coverage_variance(edges[:-1], edges[1:], duration, symmetrized) / duration ** 2
    err = np.sqrt(np.maximum(raw, 1) + excess) / scaled
    meta = {
        "duration_s": duration,
        "rate_a_hz": na / duration,
        "rate_b_hz": nb / duration,
        "counts_a": na,
        "counts_b": nb,
        "method": method,
        "symmetrized": bool(symmetrized),
    }
    if method == "asymptote":
        meta["window_s"] = [float(w_lo), float(w_hi)]
    return G2Curve(edges, raw / scaled, raw, err, float(norm), meta)


def _window_mask(curve: G2Curve, window):
    lo, hi = window
    return (curve.tau_lo >= lo * (1 - 1e-12)) & (curve.tau_hi <= hi * (1 + 1e-12))


def plateau_level(curve: G2Curve, window: Sequence[float]):
    """Inverse-variance weighted g2 over the bins inside ``window``; returns (value, err)."""
    sel = _window_mask(curve, window)
    if not sel.any():
        raise ValueError(f"no bins inside plateau window {tuple(window)}")
    den = curve.denominators()[sel]
    total = den.sum()
    var = np.sum((curve.stat_err[sel] * den) ** 2)
    return float(curve.raw_counts[sel].sum() / total), float(np.sqrt(var) / total)


def extract_tsd(curve: G2Curve, plateau: Optional[Sequence[float]] = None):
    """Bunching plateau and the delay where the excess has halved.

    Parameters
    ----------
    curve : G2Curve
        Log-binned, normalized curve.
    plateau : (lo, hi), optional
        Delay range [s] of the short-time plateau. Defaults to the first
        decade of bins.

    Returns
    -------
    t_sd : float
        First delay, interpolated linearly in log(tau), at which g2 drops
        below ``1 + (g2_st - 1) / 2``.
    g2_st : float
        Plateau value.
    """
    if plateau is None:
        lo = curve.bin_edges[0]
        plateau = (lo, lo * 10.0)
    g2_st, err = plateau_level(curve, plateau)
    if not (g2_st - 1.0 > 3.0 * err):
        raise NoBunchingError(f"no bunching detected (plateau {g2_st:.4g} +- {err:.2g})")
    level = 1.0 + 0.5 * (g2_st - 1.0)
    x = curve.centers
    after = np.nonzero(curve.tau_lo >= plateau[1] * (1 - 1e-12))[0]
    if not len(after):
        raise NoBunchingError("no bunching detected: no bins after the plateau")
    # start from the plateau's end so the first bin always sits above the level
    idx = np.concatenate([[after[0] - 1], after]) if after[0] > 0 else after
    below = np.nonzero(curve.g2[idx] < level)[0]
    if not len(below) or below[0] == 0:
        raise NoBunchingError("no bunching detected: g2 never crosses half the plateau excess")
    k1, k0 = idx[below[0]], idx[below[0] - 1]
    y0, y1 = curve.g2[k0], curve.g2[k1]
    lx0, lx1 = math.log(x[k0]), math.log(x[k1])
    t_sd = math.exp(lx0 + (level - y0) * (lx1 - lx0) / (y1 - y0))
    return t_sd, g2_st


def write_g2_csv(curve: G2Curve, path) -> None:
    """CSV with columns ``tau_lo_s,tau_hi_s,g2,raw,err`` after one ``#`` metadata line."""
    buf = io.StringIO()
    meta = dict(curve.meta, norm_constant=curve.norm_constant)
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for lo, hi, g, r, e in zip(curve.tau_lo, curve.tau_hi, curve.g2, curve.raw_counts, curve.stat_err):
        w.writerow([repr(float(lo)), repr(float(hi)), repr(float(g)), int(r), repr(float(e))])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_g2_csv(path) -> G2Curve:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        meta = json.loads(lines[0][1:].strip() or "{}")
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float).reshape(-1, 5)
    if not len(data):
        raise ValueError(f"{path}: no bins")
    lo, hi = data[:, 0], data[:, 1]
    if not np.allclose(lo[1:], hi[:-1], rtol=1e-12, atol=0):
        raise ValueError(f"{path}: bins are not contiguous")
    norm = float(meta.pop("norm_constant", 1.0))
    return G2Curve(np.append(lo, hi[-1]), data[:, 2], data[:, 3].astype(np.int64), data[:, 4], norm, meta)
