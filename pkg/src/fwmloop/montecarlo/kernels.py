"""Gate-loop kernels.

Both kernels simulate one block of gates and return
``(counts, head_i, tail_s)`` where ``counts`` holds
``[singles_s, singles_i, coinc, acc_true, acc_est_inside_block, pair_gates]``,
``head_i[j]`` flags an idler click at gate ``j`` and ``tail_s[j]`` a signal
click at gate ``n - offset + j``; the driver stitches blocks together for the
delayed-window estimate.

Gates with no surviving photon and no dark count are skipped with geometric
jumps; every other gate is simulated event by event.  The two backends
consume different random streams, so they agree in distribution only.
"""

from __future__ import annotations

import math

import numpy as np

from fwmloop._accel import njit

N_COUNTS = 6
_ZTP_DIRECT_MAX = 50.0


@njit(cache=True, nogil=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, nogil=True, inline="always")
def _uniform(s):
    # xoshiro256** step, 53-bit double in [0, 1)
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    out = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3
    return (out >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def _poisson_small(s, lam):
    u = _uniform(s)
    p = math.exp(-lam)
    cdf = p
    k = 0
    while u > cdf and k < 10000:
        k += 1
        p *= lam / k
        cdf += p
    return k


@njit(cache=True, nogil=True)
def _ztp_numba(s, lam, p1):
    # zero-truncated Poisson; p1 = P(k=1 | k>0)
    if lam > _ZTP_DIRECT_MAX:
        pieces = int(math.ceil(lam / _ZTP_DIRECT_MAX))
        while True:
            k = 0
            for _ in range(pieces):
                k += _poisson_small(s, lam / pieces)
            if k > 0:
                return k
    u = _uniform(s)
    p = p1
    cdf = p
    k = 1
    while u > cdf and k < 10000:
        k += 1
        p *= lam / k
        cdf += p
    return k


@njit(cache=True, nogil=True)
def block_kernel_numba(state, n, offset, means, dark_s, dark_i, p_depol, cum_tables, cum_weights):
    s = state.copy()
    counts = np.zeros(N_COUNTS, np.int64)
    head = np.zeros(offset, np.uint8)
    tail = np.zeros(offset, np.uint8)

    lam = 0.0
    for v in means:
        lam += v
    log_dark_quiet = math.log1p(-dark_s) + math.log1p(-dark_i)
    p_act = -math.expm1(-lam + log_dark_quiet)
    if p_act <= 0.0:
        return counts, head, tail
    p_phot = -math.expm1(-lam) / p_act
    p1 = lam * math.exp(-lam) / (-math.expm1(-lam)) if lam > 0.0 else 1.0
    p_dark_any = -math.expm1(log_dark_quiet)
    ds_given = dark_s / p_dark_any if p_dark_any > 0.0 else 0.0
    cum_class = np.ones(5)
    if lam > 0.0:
        acc = 0.0
        for c in range(4):
            acc += means[c]
            cum_class[c] = acc / lam
    inv_log_q = 1.0 / math.log1p(-p_act) if p_act < 1.0 else 0.0
    n_comp = cum_weights.shape[0]
    ring = np.full(offset, -1, np.int64)

    g = -1
    while True:
        if p_act >= 1.0:
            gap = 1.0
        else:
            gap = math.floor(math.log(1.0 - _uniform(s)) * inv_log_q) + 1.0
        if gap > (n - 1 - g):
            break
        g += np.int64(gap)

        comp = 0
        if n_comp > 1:
            u = _uniform(s)
            while comp < n_comp - 1 and u >= cum_weights[comp]:
                comp += 1
        if _uniform(s) < p_phot:
            m = _ztp_numba(s, lam, p1)
            d_s = _uniform(s) < dark_s
            d_i = _uniform(s) < dark_i
        else:
            m = 0
            d_s = _uniform(s) < ds_given
            r = _uniform(s)
            d_i = (r < dark_i) if d_s else True

        s_hit = d_s
        i_hit = d_i
        pair_hit = False
        for _ in range(m):
            u = _uniform(s)
            c = 0
            while c < 4 and u >= cum_class[c]:
                c += 1
            if c <= 2:
                u = _uniform(s)
                o = 0
                while o < 3 and u >= cum_tables[comp, o]:
                    o += 1
                sp = o < 2
                ip = o == 0 or o == 2
                if p_depol > 0.0:
                    if _uniform(s) < p_depol:
                        sp = _uniform(s) < 0.5
                    if _uniform(s) < p_depol:
                        ip = _uniform(s) < 0.5
                if c == 0:
                    if sp and ip:
                        pair_hit = True
                    s_hit = s_hit or sp
                    i_hit = i_hit or ip
                elif c == 1:
                    s_hit = s_hit or sp
                else:
                    i_hit = i_hit or ip
            elif c == 3:
                if _uniform(s) < 0.5:
                    s_hit = True
            else:
                if _uniform(s) < 0.5:
                    i_hit = True

        if s_hit:
            counts[0] += 1
        if i_hit:
            counts[1] += 1
            if ring[g % offset] == g - offset:
                counts[4] += 1
            if g < offset:
                head[g] = 1
        if s_hit and i_hit:
            counts[2] += 1
            if not pair_hit:
                counts[3] += 1
        if pair_hit:
            counts[5] += 1
        if s_hit:
            ring[g % offset] = g
            if g >= n - offset:
                tail[g - (n - offset)] = 1
    return counts, head, tail


def _ztp_numpy(rng, lam, size):
    if size == 0:
        return np.zeros(0, np.int64)
    if lam > _ZTP_DIRECT_MAX:
        k = rng.poisson(lam, size)
        while (bad := k == 0).any():
            k[bad] = rng.poisson(lam, int(bad.sum()))
        return k.astype(np.int64)
    u = rng.random(size)
    umax = u.max()
    p = lam * math.exp(-lam) / (-math.expm1(-lam))
    cdf = [p]
    k = 1
    while cdf[-1] < umax and k < 10000:
        k += 1
        p *= lam / k
        cdf.append(cdf[-1] + p)
    return np.searchsorted(np.asarray(cdf), u, side="left").astype(np.int64) + 1


def _active_gates(rng, n, p_act):
    if p_act >= 1.0:
        return np.arange(n, dtype=np.int64)
    expect = n * p_act
    pieces = []
    last = -1
    while True:
        size = int(expect + 6.0 * math.sqrt(expect) + 16)
        gaps = rng.geometric(p_act, size)
        pos = last + np.cumsum(gaps, dtype=np.int64)
        pieces.append(pos)
        last = int(pos[-1])
        if last >= n - 1:
            break
    idx = np.concatenate(pieces)
    return idx[idx < n]


def block_kernel_numpy(rng, n, offset, means, dark_s, dark_i, p_depol, cum_tables, cum_weights):
    counts = np.zeros(N_COUNTS, np.int64)
    head = np.zeros(offset, np.uint8)
    tail = np.zeros(offset, np.uint8)

    lam = float(means.sum())
    log_dark_quiet = math.log1p(-dark_s) + math.log1p(-dark_i)
    p_act = -math.expm1(-lam + log_dark_quiet)
    if p_act <= 0.0:
        return counts, head, tail
    p_phot = -math.expm1(-lam) / p_act
    p_dark_any = -math.expm1(log_dark_quiet)
    ds_given = dark_s / p_dark_any if p_dark_any > 0.0 else 0.0
    cum_class = np.cumsum(means)[:4] / lam if lam > 0 else np.ones(4)

    idx = _active_gates(rng, n, p_act)
    k = idx.size
    n_comp = cum_weights.shape[0]
    if n_comp > 1:
        comp = np.minimum(np.searchsorted(cum_weights, rng.random(k), side="right"), n_comp - 1)
    else:
        comp = np.zeros(k, np.int64)

    phot = rng.random(k) < p_phot
    m = np.zeros(k, np.int64)
    m[phot] = _ztp_numpy(rng, lam, int(phot.sum()))
    r1 = rng.random(k)
    r2 = rng.random(k)
    d_s = np.where(phot, r1 < dark_s, r1 < ds_given)
    d_i = np.where(phot | d_s, r2 < dark_i, True)

    gate_of = np.repeat(np.arange(k), m)
    e = gate_of.size
    cat = np.searchsorted(cum_class, rng.random(e), side="right")
    ct = cum_tables[comp[gate_of]]
    u = rng.random(e)
    o = (u >= ct[:, 0]).astype(np.int64) + (u >= ct[:, 1]) + (u >= ct[:, 2])
    sp = o < 2
    ip = (o == 0) | (o == 2)
    if p_depol > 0.0:
        sp = np.where(rng.random(e) < p_depol, rng.random(e) < 0.5, sp)
        ip = np.where(rng.random(e) < p_depol, rng.random(e) < 0.5, ip)
    coin = rng.random(e) < 0.5
    s_det = np.where((cat == 0) | (cat == 1), sp, (cat == 3) & coin)
    i_det = np.where((cat == 0) | (cat == 2), ip, (cat == 4) & coin)
    pair = (cat == 0) & sp & ip

    def any_per_gate(flags):
        return np.bincount(gate_of[flags], minlength=k) > 0

    s_hit = d_s | any_per_gate(s_det)
    i_hit = d_i | any_per_gate(i_det)
    pair_hit = any_per_gate(pair)
    coinc = s_hit & i_hit

    counts[0] = s_hit.sum()
    counts[1] = i_hit.sum()
    counts[2] = coinc.sum()
    counts[3] = (coinc & ~pair_hit).sum()
    counts[4] = np.intersect1d(idx[s_hit] + offset, idx[i_hit], assume_unique=True).size
    counts[5] = pair_hit.sum()
    h = idx[i_hit & (idx < offset)]
    head[h] = 1
    t = idx[s_hit & (idx >= n - offset)]
    tail[t - (n - offset)] = 1
    return counts, head, tail
