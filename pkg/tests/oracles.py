"""Independent reference implementations used as test oracles.

Written in plain Python (lists, dicts, fractions) without calling into the
code under test, so agreement between the two is meaningful.
"""

from datetime import datetime, timedelta
from fractions import Fraction

import numpy as np

from stepforecast.ingest import RawRecord


# -- pipeline -----------------------------------------------------------------

def ref_quantile(values, q):
    """Linear-interpolation quantile in exact rational arithmetic."""
    xs = sorted(Fraction(v) for v in values)
    pos = Fraction(str(q)) * (len(xs) - 1)
    i = int(pos)
    if i + 1 >= len(xs):
        return xs[-1]
    return xs[i] + (pos - i) * (xs[i + 1] - xs[i])


def ref_pipeline(records, *, period=None, granularity="hourly", q=0.05, outliers=True,
                 policy="drop", impute=False, active=(8, 22), window_days=3):
    """Straight-line pipeline: returns {user: [(date, values, mask), ...]} (daily: values is the total)."""
    # dedup: first position wins the slot, max steps wins the value
    best = {}
    for i, r in enumerate(records):
        key = (r.user_id, r.start_time, r.end_time)
        if key not in best:
            best[key] = [i, r]
        elif r.steps > best[key][1].steps:
            best[key][1] = r
    recs = [r for _, r in sorted(best.values(), key=lambda p: p[0])]

    if period is not None:
        recs = [r for r in recs if period.start_date <= r.start_time.date() <= period.end_date]

    # bucket
    sums, masks, coarse = {}, {}, {}
    n_active = active[1] - active[0]
    for r in recs:
        key = (r.user_id, r.start_time.date())
        short = r.end_time - r.start_time <= timedelta(hours=1)
        if not short and policy != "split":
            continue                      # dropped coarse records leave no trace
        if key not in sums:
            sums[key], masks[key] = [0] * 24, [False] * 24
        if short:
            sums[key][r.start_time.hour] += r.steps
            masks[key][r.start_time.hour] = True
        else:
            for h in range(*active):
                coarse[key + (h,)] = coarse.get(key + (h,), 0) + r.steps
                masks[key][h] = True
    for (u, d, h), s in coarse.items():
        sums[(u, d)][h] += (2 * s + n_active) // (2 * n_active)   # half-up of s / n_active

    days = {}
    for (u, d) in sorted(sums):
        days.setdefault(u, []).append(d)

    if outliers and sums:
        totals = [sum(v) for v in sums.values()]
        lo, hi = ref_quantile(totals, q), ref_quantile(totals, 1 - q)
        for u in list(days):
            days[u] = [d for d in days[u] if lo <= sum(sums[(u, d)]) <= hi]

    out = {}
    for u, ds in days.items():
        keep = []
        i = 0
        while i < len(ds):
            j = i
            while j + 1 < len(ds) and (ds[j + 1] - ds[j]).days == 1:
                j += 1
            if j - i + 1 >= window_days + 1:
                keep.extend(ds[i:j + 1])
            i = j + 1
        if keep:
            out[u] = keep

    result = {}
    for u, ds in out.items():
        rows = [(d, list(sums[(u, d)]), list(masks[(u, d)])) for d in ds]
        if impute and granularity == "hourly":
            for h in range(*active):
                nz = sorted(v[h] for _, v, _ in rows if v[h] != 0)
                if not nz:
                    continue
                m = len(nz)
                med = Fraction(nz[m // 2]) if m % 2 else Fraction(nz[m // 2 - 1] + nz[m // 2], 2)
                fill = int(med + Fraction(1, 2))
                for _, v, _ in rows:
                    if v[h] == 0:
                        v[h] = fill
        if granularity == "daily":
            rows = [(d, sum(v), None) for d, v, _ in rows]
        result[u] = rows
    return result


def grids_as_reference(grids):
    out = {}
    for g in grids:
        if g.granularity == "hourly":
            out[g.user_id] = [(d, [int(x) for x in v], [bool(x) for x in m])
                              for d, v, m in zip(g.dates, g.values, g.mask)]
        else:
            out[g.user_id] = [(d, int(t), None) for d, t in zip(g.dates, g.day_totals)]
    return out


def random_records(rng, n_users=3, n_records=60, start=datetime(2015, 3, 1)):
    """Messy record soup: sub-hour and multi-hour records, repeats, several users."""
    recs = []
    for _ in range(n_records):
        user = f"u{rng.integers(n_users)}"
        t = start + timedelta(days=int(rng.integers(10)), hours=int(rng.integers(24)),
                              minutes=int(rng.integers(60)))
        dur = timedelta(minutes=int(rng.choice([0, 1, 15, 30, 59, 60, 61, 120, 300])))
        recs.append(RawRecord(user, t, t + dur, int(rng.integers(0, 3000))))
        if rng.random() < 0.15:
            recs.append(recs[-1])
    return recs


# -- classic models -------------------------------------------------------------

def ref_ridge(X, y, lam, fit_intercept=True):
    """Augmented normal equations with an unpenalised intercept column."""
    n, d = X.shape
    if not fit_intercept:
        return np.linalg.solve(X.T @ X + lam * np.eye(d), X.T @ y), 0.0
    A = np.hstack([X, np.ones((n, 1))])
    P = lam * np.eye(d + 1)
    P[d, d] = 0.0
    theta = np.linalg.solve(A.T @ A + P, A.T @ y)
    return theta[:d], theta[d]


def brute_force_split(X, y, min_samples_leaf=1, rtol=1e-10):
    """Best (feature, threshold, sse) by explicit partitioning at every midpoint.

    Scores within ``rtol`` of the node SSE count as ties; ties go to the
    lowest feature, then the lowest threshold.
    """
    n, d = X.shape
    total = float(((y - y.mean()) ** 2).sum())
    cands = []
    for j in range(d):
        vals = sorted(set(X[:, j].tolist()))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left = y[X[:, j] <= thr]
            right = y[X[:, j] > thr]
            if len(left) < min_samples_leaf or len(right) < min_samples_leaf:
                continue
            sse = float(((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum())
            cands.append((sse, j, thr))
    if not cands:
        return None
    best = min(c[0] for c in cands)
    tol = rtol * max(total, 1e-300)
    tied = [c for c in cands if c[0] <= best + tol]
    sse, j, thr = min(tied, key=lambda c: (c[1], c[2]))
    return j, thr, sse


# -- metrics --------------------------------------------------------------------

def hand_median(values):
    s = sorted(values)
    m = len(s)
    return s[m // 2] if m % 2 else (s[m // 2 - 1] + s[m // 2]) / 2



# -- finite differences -------------------------------------------------------------

def fd_gradient_errors(config, params, X, y, h=1e-5, floor=1e-6):
    """Max elementwise relative error between analytic and central-difference gradients.

    Dropout masks are replayed by reseeding the rng before every forward pass.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    entries that are zero up to rounding from dividing noise by noise.
    """
    from stepforecast.neural_models import loss_and_grad

    def loss(p):
        return loss_and_grad(config, p, X, y, training=True, rng=np.random.default_rng(123))[0]

    _, grads = loss_and_grad(config, params, X, y, training=True, rng=np.random.default_rng(123))
    worst = {}
    for name, value in params.items():
        num = np.zeros_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss(params)
            flat[i] = old - h
            down = loss(params)
            flat[i] = old
            num.reshape(-1)[i] = (up - down) / (2 * h)
        a = grads[name]
        worst[name] = float(np.max(np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)))
    return worst


def random_net_config(rng):
    """Small random (architecture, shape, activation, dropout) draw plus a matching input size."""
    from stepforecast.neural_models import NetConfig, conv_output_lengths
    arch = ["mlp", "cnn", "lstm"][int(rng.integers(3))]
    channels = int(rng.integers(1, 3))
    common = dict(architecture=arch, n_channels=channels, seed=int(rng.integers(1 << 30)),
                  activation=str(rng.choice(["relu", "tanh", "identity"])),
                  dropout=float(rng.choice([0.0, 0.0, 0.3])))
    if arch == "mlp":
        cfg = NetConfig(hidden=tuple(int(v) for v in rng.integers(1, 6, size=int(rng.integers(1, 4)))), **common)
        d = int(rng.integers(1, 7))
    elif arch == "cnn":
        k, stride, pool = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        chans = tuple(int(v) for v in rng.integers(1, 4, size=int(rng.integers(1, 3))))
        cfg = NetConfig(conv_channels=chans, kernel_size=k, conv_stride=stride, pool_size=pool, **common)
        length = 8 + int(rng.integers(0, 8))
        while True:
            try:
                conv_output_lengths(cfg, length)
                break
            except ValueError:
                length += 4
        d = length * channels
    else:
        cfg = NetConfig(lstm_hidden=int(rng.integers(1, 5)), lstm_layers=int(rng.integers(1, 4)), **common)
        d = int(rng.integers(1, 6)) * channels
    return cfg, d


def generic_params(params, rng, scale=0.5):
    """Initialised weights with random biases.

    Fresh biases are zero, so a fully dead ReLU layer feeds exact zeros into
    the next pre-activation, which then sits on the kink where the gradient
    is undefined. Random biases move the check to a generic point.
    """
    out = {k: v.copy() for k, v in params.items()}
    for k, v in out.items():
        if k.startswith(("b", "kb", "lb")):
            v[...] = rng.normal(scale=scale, size=v.shape)
    return out
