"""Independent reference implementations used to check the package.

Deliberately slow and literal: explicit DFT sums, loop-built filterbanks,
exhaustive path enumeration.
"""

import itertools
import math

import numpy as np


def dft_power(x, n_fft):
    n = np.arange(len(x))
    k = np.arange(n_fft // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * n / n_fft)
    spec = basis @ x
    return np.abs(spec) ** 2


def htk_mel_filters(sample_rate, n_fft, n_mels):
    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    top = mel(sample_rate / 2.0)
    edges = [hz(top * i / (n_mels + 1)) for i in range(n_mels + 2)]
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for b in range(n_mels):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        for k in range(n_fft // 2 + 1):
            f = k * sample_rate / n_fft
            if lo < f <= mid:
                fb[b, k] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                fb[b, k] = (hi - f) / (hi - mid)
    return fb


def dct2_ortho(v):
    n = len(v)
    out = np.empty(n)
    for k in range(n):
        s = sum(v[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
        out[k] = s * (math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n))
    return out


def mfcc_oracle(x, sample_rate, win, hop, n_fft, n_mels, n_keep, n_drop=0, floor=1e-10):
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / win) for i in range(win)])
    fb = htk_mel_filters(sample_rate, n_fft, n_mels)
    frames = []
    for start in range(0, len(x) - win + 1, hop):
        p = dft_power(x[start:start + win] * window, n_fft)
        logmel = np.log(np.maximum(fb @ p, floor))
        frames.append(dct2_ortho(logmel)[n_drop:n_keep])
    return np.array(frames)


def dtw_from_origin(dist, start=0):
    """Accumulated cost table for steps (1,0),(0,1),(1,1) from a virtual cell (-1, start) of cost 0."""
    n, m = dist.shape
    D = np.full((n, m), np.inf)
    for i in range(n):
        for j in range(m):
            if i == 0:
                cands = [0.0] if j in (start, start + 1) else []
            else:
                cands = [D[i - 1, j]] + ([D[i - 1, j - 1]] if j > 0 else [])
            if j > 0:
                cands.append(D[i, j - 1])
            D[i, j] = dist[i, j] + min(cands, default=np.inf)
    return D


def enumerate_path_costs(dist, start=0):
    """Minimum cost to every cell by listing every monotone path explicitly (tiny inputs only)."""
    n, m = dist.shape
    moves = ((1, 0), (0, 1), (1, 1))
    best = np.full((n, m), np.inf)
    # first visited cell: (0, start) or diagonal (0, start + 1)
    firsts = [(0, start)] + ([(0, start + 1)] if start + 1 < m else [])
    max_len = n + m
    for first in firsts:
        for length in range(0, max_len):
            for seq in itertools.product(moves, repeat=length):
                i, j = first
                cost = dist[i, j]
                ok = True
                for di, dj in seq:
                    i, j = i + di, j + dj
                    if i >= n or j >= m:
                        ok = False
                        break
                    cost += dist[i, j]
                if ok and cost < best[i, j]:
                    best[i, j] = cost
    return best
