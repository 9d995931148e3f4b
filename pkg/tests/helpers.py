"""Independent brute-force oracles used across the test suite.

Everything here is written with explicit loops, deliberately sharing no
code with the library paths it checks.
"""

import numpy as np


def loop_mean(a: np.ndarray, axes: tuple) -> np.ndarray:
    keep = [i for i in range(a.ndim) if i not in axes]
    out_shape = [a.shape[i] for i in keep]
    out = np.zeros(out_shape)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    for idx in np.ndindex(*a.shape):
        out_idx = tuple(idx[i] for i in keep)
        out[out_idx] += a[idx]
    return out / count


def loop_var(a: np.ndarray, axes: tuple) -> np.ndarray:
    """Two-pass population variance."""
    mean = loop_mean(a, axes)
    keep = [i for i in range(a.ndim) if i not in axes]
    out = np.zeros_like(mean)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    for idx in np.ndindex(*a.shape):
        out_idx = tuple(idx[i] for i in keep)
        d = a[idx] - mean[out_idx]
        out[out_idx] += d * d
    return out / count


def loop_freq_broadcast_mul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x (N, C, F, T) times per-frequency vector w (F,), four explicit loops."""
    n, c, f, t = x.shape
    out = np.zeros_like(x)
    for i in range(n):
        for j in range(c):
            for k in range(f):
                for m in range(t):
                    out[i, j, k, m] = x[i, j, k, m] * w[k]
    return out


def loop_conv2d(x: np.ndarray, k: np.ndarray, stride=1, padding=0) -> np.ndarray:
    """Direct six-nested-loop cross-correlation."""
    sf = st = stride
    pf = pt = padding
    n, c, f, t = x.shape
    co, ci, kf, kt = k.shape
    assert ci == c
    xp = np.zeros((n, c, f + 2 * pf, t + 2 * pt))
    xp[:, :, pf : pf + f, pt : pt + t] = x
    of = (f + 2 * pf - kf) // sf + 1
    ot = (t + 2 * pt - kt) // st + 1
    out = np.zeros((n, co, of, ot))
    for b in range(n):
        for o in range(co):
            for i in range(of):
                for j in range(ot):
                    acc = 0.0
                    for cc in range(c):
                        for h in range(kf):
                            for w in range(kt):
                                acc += xp[b, cc, i * sf + h, j * st + w] * k[o, cc, h, w]
                    out[b, o, i, j] = acc
    return out


def _rates(threshold, targets, nontargets):
    frr = sum(1 for s in targets if s < threshold) / len(targets)
    far = sum(1 for s in nontargets if s >= threshold) / len(nontargets)
    return frr, far


def scan_thresholds(targets, nontargets):
    """All score midpoints plus sentinels below/above every score, ascending."""
    scores = sorted(set(list(targets) + list(nontargets)))
    ths = [scores[0] - 1.0]
    for a, b in zip(scores[:-1], scores[1:]):
        ths.append((a + b) / 2.0)
    ths.append(scores[-1] + 1.0)
    return ths


def scan_eer(targets, nontargets):
    """Exhaustive threshold scan with the same step-ROC interpolation rule."""
    ths = scan_thresholds(targets, nontargets)
    pts = [_rates(th, targets, nontargets) for th in ths]
    prev_frr, prev_far = pts[0]
    for (frr, far), th_prev, th in zip(pts[1:], ths[:-1], ths[1:]):
        d_prev = prev_frr - prev_far
        d = frr - far
        if d_prev == 0.0:
            return prev_frr
        if d_prev < 0.0 <= d:
            t = d_prev / (d_prev - d)
            return prev_frr + t * (frr - prev_frr)
        prev_frr, prev_far = frr, far
    return pts[-1][0]


def scan_min_dcf(targets, nontargets, p_target, c_miss, c_fa):
    best = None
    for th in scan_thresholds(targets, nontargets):
        frr, far = _rates(th, targets, nontargets)
        cost = c_miss * p_target * frr + c_fa * (1.0 - p_target) * far
        norm = min(c_miss * p_target, c_fa * (1.0 - p_target))
        val = cost / norm
        if best is None or val < best:
            best = val
    return best
