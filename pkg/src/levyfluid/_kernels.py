"""Event-driven simulation kernels.

Every function here is compiled by numba unless ``LEVYFLUID_DISABLE_NUMBA`` is
set (see ``_accel``).  Arguments are flat numpy arrays so the same code runs in
nopython mode and interpreted.

Model layout (``mp``, float64)::

    mp[0] drain rate c = r - a     mp[4] vacation mode (0 reflected, 1 direct, 2 work-during)
    mp[1] input drift a            mp[5] input jump family code
    mp[2] input jump rate          mp[6] repair jump family code
    mp[3] failure rate             mp[7] vacation law family code

Between events the workload falls linearly with slope ``-c``.  Input jumps and
failures share one Poisson clock of rate ``lam_J + lam_R``; the kind of each
clock event is decided by a uniform draw.  A zero hit wins ties with clock
events.
"""

import math

import numpy as np

from ._accel import jit

INPUT_JUMP = 0
BREAKDOWN = 1
VACATION = 2


@jit
def draw(code, par, rng):
    if code == 0:
        return rng.exponential(1.0 / par[0])
    if code == 1:
        return par[0]
    if code == 2:
        return rng.gamma(par[0], 1.0 / par[1])
    n = int(par[0])
    u = rng.random()
    acc = 0.0
    for i in range(n):
        acc += par[1 + i]
        if u < acc or i == n - 1:
            return rng.exponential(1.0 / par[1 + n + i])
    return 0.0


@jit
def draw_many(code, par, n, rng):
    out = np.empty(n)
    for i in range(n):
        out[i] = draw(code, par, rng)
    return out


@jit
def draw_eta(mp, jpar, vpar, rng):
    """Workload added at a zero hit."""
    if mp[4] == 1.0:
        return draw(int(mp[7]), vpar, rng)
    # work during vacation: repeat vacations until some input arrived
    a = mp[1]
    lam_j = mp[2]
    while True:
        v = draw(int(mp[7]), vpar, rng)
        x = a * v
        if lam_j > 0.0:
            k = rng.poisson(lam_j * v)
            for _ in range(k):
                x += draw(int(mp[5]), jpar, rng)
        if x > 0.0:
            return x


@jit
def draw_eta_many(mp, jpar, vpar, n, rng):
    out = np.empty(n)
    for i in range(n):
        out[i] = draw_eta(mp, jpar, vpar, rng)
    return out


@jit
def _grow(arr):
    out = np.empty(2 * arr.shape[0], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@jit
def _exp_integral(w_start, w_end, theta, c):
    """Integral of exp(-theta W) over a segment where W falls linearly at rate c."""
    if theta == 0.0:
        return (w_start - w_end) / c
    return math.exp(-theta * w_end) * -math.expm1(-theta * (w_start - w_end)) / (theta * c)


@jit
def _segment(w, t, t1, c, sample_times, si, samples, thetas, integ):
    """Drain from (t, w) to t1, clamping at zero; record samples in [t, t1).

    Returns the workload at t1 and the next sample index.
    """
    drop = c * (t1 - t)
    if drop <= w:
        w_end = w - drop
        flat = 0.0
    else:
        w_end = 0.0
        flat = t1 - t - w / c
    for j in range(thetas.shape[0]):
        integ[j] += _exp_integral(w, w_end, thetas[j], c) + flat
    ns = sample_times.shape[0]
    while si < ns and sample_times[si] < t1:
        s = sample_times[si]
        if s >= t:
            samples[si] = max(w - c * (s - t), 0.0)
        si += 1
    return w_end, si


@jit
def run_path(w0, horizon, mp, jpar, rpar, vpar, sample_times, thetas, record_log, pair_start, max_pairs, rng):
    """Simulate one trajectory on [0, horizon); an event due exactly at
    ``horizon`` is not applied, so a zero horizon leaves an empty log.

    Records W at ``sample_times`` (sorted), the exact integrals of
    exp(-theta W) for each theta, optionally the full event log, and the
    breakdown pairs (W-, W+) occurring at or after ``pair_start``.  When
    ``max_pairs > 0`` the run stops as soon as that many pairs are collected.
    """
    c = mp[0]
    lam_j = mp[2]
    lam_r = mp[3]
    vmode = int(mp[4])
    jcode = int(mp[5])
    rcode = int(mp[6])
    lam = lam_j + lam_r

    ns = sample_times.shape[0]
    samples = np.full(ns, np.nan)
    integ = np.zeros(thetas.shape[0])
    cap = 1024 if record_log else 1
    lt = np.empty(cap)
    lk = np.empty(cap, dtype=np.int8)
    lsz = np.empty(cap)
    lwb = np.empty(cap)
    lwa = np.empty(cap)
    nlog = 0
    pcap = max_pairs if max_pairs > 0 else 1024
    pm = np.empty(pcap)
    pp = np.empty(pcap)
    npairs = 0

    t = 0.0
    w = w0
    si = 0
    t_ev = t + rng.exponential(1.0 / lam) if lam > 0.0 else np.inf
    while True:
        if vmode == 0:
            t_zero = np.inf
        else:
            t_zero = t + w / c
        t_next = min(t_zero, t_ev)
        if t_next >= horizon:
            w, si = _segment(w, t, horizon, c, sample_times, si, samples, thetas, integ)
            t = horizon
            while si < ns and sample_times[si] <= horizon:
                samples[si] = w
                si += 1
            break
        w, si = _segment(w, t, t_next, c, sample_times, si, samples, thetas, integ)
        t = t_next
        if t_zero <= t_ev:
            size = draw_eta(mp, jpar, vpar, rng)
            kind = VACATION
            w_before = 0.0
        else:
            if lam_r == 0.0 or (lam_j > 0.0 and rng.random() * lam < lam_j):
                size = draw(jcode, jpar, rng)
                kind = INPUT_JUMP
            else:
                size = draw(rcode, rpar, rng)
                kind = BREAKDOWN
            t_ev = t + rng.exponential(1.0 / lam)
            w_before = w
        w = w_before + size
        if record_log:
            if nlog == lt.shape[0]:
                lt = _grow(lt)
                lk = _grow(lk)
                lsz = _grow(lsz)
                lwb = _grow(lwb)
                lwa = _grow(lwa)
            lt[nlog] = t
            lk[nlog] = kind
            lsz[nlog] = size
            lwb[nlog] = w_before
            lwa[nlog] = w
            nlog += 1
        if kind == BREAKDOWN and t >= pair_start:
            if npairs == pm.shape[0]:
                pm = _grow(pm)
                pp = _grow(pp)
            pm[npairs] = w_before
            pp[npairs] = w
            npairs += 1
            if max_pairs > 0 and npairs == max_pairs:
                break
    return (
        w,
        t,
        samples,
        integ,
        lt[:nlog].copy(),
        lk[:nlog].copy(),
        lsz[:nlog].copy(),
        lwb[:nlog].copy(),
        lwa[:nlog].copy(),
        pm[:npairs].copy(),
        pp[:npairs].copy(),
    )


@jit
def advance(w, horizon, mp, jpar, rpar, vpar, rng):
    """Workload at time ``horizon`` starting from ``w`` (no recording)."""
    c = mp[0]
    lam_j = mp[2]
    lam_r = mp[3]
    vmode = int(mp[4])
    lam = lam_j + lam_r
    t = 0.0
    t_ev = rng.exponential(1.0 / lam) if lam > 0.0 else np.inf
    while True:
        t_zero = np.inf if vmode == 0 else t + w / c
        t_next = min(t_zero, t_ev)
        if t_next > horizon:
            return max(w - c * (horizon - t), 0.0)
        w = max(w - c * (t_next - t), 0.0)
        t = t_next
        if t_zero <= t_ev:
            w = draw_eta(mp, jpar, vpar, rng)
        else:
            if lam_r == 0.0 or (lam_j > 0.0 and rng.random() * lam < lam_j):
                w += draw(int(mp[5]), jpar, rng)
            else:
                w += draw(int(mp[6]), rpar, rng)
            t_ev = t + rng.exponential(1.0 / lam)


@jit
def killed_batch(x, gamma, reps, mp, jpar, rpar, vpar, rng):
    out = np.empty(reps)
    for i in range(reps):
        horizon = rng.exponential(1.0 / gamma)
        out[i] = advance(x, horizon, mp, jpar, rpar, vpar, rng)
    return out


@jit
def until_zero(w, mp, jpar, rpar, max_events, rng):
    """First time the workload hits zero (vacations never fire).

    Returns ``(duration, censored)``; ``censored`` is set when ``max_events``
    clock events elapse first.
    """
    c = mp[0]
    lam_j = mp[2]
    lam_r = mp[3]
    lam = lam_j + lam_r
    t = 0.0
    events = 0
    while True:
        t_zero = t + w / c
        t_ev = t + rng.exponential(1.0 / lam) if lam > 0.0 else np.inf
        if t_zero <= t_ev:
            return t_zero, False
        w -= c * (t_ev - t)
        t = t_ev
        if lam_r == 0.0 or (lam_j > 0.0 and rng.random() * lam < lam_j):
            w += draw(int(mp[5]), jpar, rng)
        else:
            w += draw(int(mp[6]), rpar, rng)
        events += 1
        if events >= max_events:
            return t, True


@jit
def until_zero_from_inits(inits, mp, jpar, rpar, max_events, rng):
    n = inits.shape[0]
    out = np.empty(n)
    censored = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        out[i], censored[i] = until_zero(inits[i], mp, jpar, rpar, max_events, rng)
    return out, censored


@jit
def until_zero_from_law(n_jumps, code, par, reps, mp, jpar, rpar, max_events, rng):
    """Replications of the zero-hit time started from a sum of ``n_jumps`` draws."""
    out = np.empty(reps)
    censored = np.zeros(reps, dtype=np.bool_)
    for i in range(reps):
        w = 0.0
        for _ in range(n_jumps):
            w += draw(code, par, rng)
        out[i], censored[i] = until_zero(w, mp, jpar, rpar, max_events, rng)
    return out, censored


@jit
def first_passage_batch(xi_code, xi_par, reps, mp, jpar, max_events, rng):
    """First passage of the net input below ``-xi``; returns times (no failures)."""
    mp_net = mp.copy()
    mp_net[3] = 0.0
    empty = np.empty(1)
    out = np.empty(reps)
    censored = np.zeros(reps, dtype=np.bool_)
    for i in range(reps):
        w = draw(xi_code, xi_par, rng)
        out[i], censored[i] = until_zero(w, mp_net, jpar, empty, max_events, rng)
    return out, censored


@jit
def _local_time(w, t, t1, c):
    """Reflection local time accrued on ``[t, t1]``: ``c`` times the time clamped at zero."""
    flat = (t1 - t) - w / c
    return c * flat if flat > 0.0 else 0.0


@jit
def kella_whitt_batch(w0, checkpoints, thetas, varphis, reps, mp, jpar, rpar, vpar, rng):
    """Kella-Whitt martingale values ``M_t`` for each replication, theta and checkpoint.

    Consumes the random stream exactly like ``run_path`` with horizon equal to
    the last checkpoint, so a path simulated with the same seed reproduces the
    first replication.
    """
    c = mp[0]
    lam_j = mp[2]
    lam_r = mp[3]
    vmode = int(mp[4])
    jcode = int(mp[5])
    rcode = int(mp[6])
    lam = lam_j + lam_r
    nth = thetas.shape[0]
    nck = checkpoints.shape[0]
    out = np.empty((reps, nth, nck))
    integ = np.zeros(nth)
    jumps = np.zeros(nth)
    no_samples = np.empty(0)
    no_out = np.empty(0)
    for rep in range(reps):
        integ[:] = 0.0
        jumps[:] = 0.0
        local = 0.0
        t = 0.0
        w = w0
        ck = 0
        t_ev = t + rng.exponential(1.0 / lam) if lam > 0.0 else np.inf
        while ck < nck:
            t_zero = np.inf if vmode == 0 else t + w / c
            t_next = min(t_zero, t_ev)
            # close every checkpoint reached before the next event
            while ck < nck and checkpoints[ck] < t_next:
                tc = checkpoints[ck]
                part = integ.copy()
                wc, _ = _segment(w, t, tc, c, no_samples, 0, no_out, thetas, part)
                loc = local + _local_time(w, t, tc, c) if vmode == 0 else 0.0
                for j in range(nth):
                    out[rep, j, ck] = (
                        varphis[j] * part[j]
                        + math.exp(-thetas[j] * w0)
                        - math.exp(-thetas[j] * wc)
                        - jumps[j]
                        - thetas[j] * loc
                    )
                ck += 1
            if ck >= nck:
                break
            if vmode == 0:
                local += _local_time(w, t, t_next, c)
            w, _ = _segment(w, t, t_next, c, no_samples, 0, no_out, thetas, integ)
            t = t_next
            if t_zero <= t_ev:
                size = draw_eta(mp, jpar, vpar, rng)
                for j in range(nth):
                    jumps[j] += -math.expm1(-thetas[j] * size)
                w = size
            else:
                if lam_r == 0.0 or (lam_j > 0.0 and rng.random() * lam < lam_j):
                    w += draw(jcode, jpar, rng)
                else:
                    size = draw(rcode, rpar, rng)
                    for j in range(nth):
                        # exp(-theta W-) - exp(-theta W+)
                        jumps[j] += math.exp(-thetas[j] * w) * -math.expm1(-thetas[j] * size)
                    w += size
                t_ev = t + rng.exponential(1.0 / lam)
    return out


@jit
def ks_sorted(a, b):
    """Two-sample Kolmogorov-Smirnov distance of two sorted arrays."""
    na = a.shape[0]
    nb = b.shape[0]
    i = 0
    j = 0
    d = 0.0
    while i < na and j < nb:
        x = min(a[i], b[j])
        while i < na and a[i] <= x:
            i += 1
        while j < nb and b[j] <= x:
            j += 1
        diff = abs(i / na - j / nb)
        if diff > d:
            d = diff
    return d
