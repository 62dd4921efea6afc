"""Compiled inner loops.

All kernels release the GIL and take a ``numpy.random.Generator`` so that a
caller owning one keyed stream per replica (or per chunk of replicas) gets the
same numbers regardless of how work is spread over threads.  Inputs are
drawn inline in each loop: handing the generator to a helper function costs
several times the draw itself.  ``raw > 1`` averages that many raw draws.
"""

from __future__ import annotations

import numba
import numpy as np

_OPTS = dict(nogil=True, cache=True)


@numba.njit(inline="always", **_OPTS)
def _transform(code, p0, p1, vals, cdf, r):
    """Map a uniform (``code`` 0, 1) or standard normal (``code`` 2) variate to an input."""
    if code == 0:
        return vals[np.searchsorted(cdf, r, side="right")]
    if code == 1:
        return p0 + (p1 - p0) * r
    return p0 + p1 * r


@numba.njit(**_OPTS)
def adam_path(rng, code, p0, p1, vals, cdf, raw, map_code, const,
              alpha, beta, eps, gammas, n0, theta0, m0, v0,
              bias_correction, eps_inside, stride, marks, keep_inputs):
    """Iterate the Adam recursion for ``len(gammas)`` steps.

    Returns recorded rows ``(n, theta, m, v, sigma, x)`` (row 0 is the initial
    state) after every ``stride`` steps, or after the step counts listed in the
    sorted array ``marks`` when it is non-empty; the full input record if
    requested; and the index of the first non-finite step (``-1`` if none).
    """
    n_steps = gammas.shape[0]
    d = theta0.shape[0]
    use_marks = marks.shape[0] > 0
    rows = (marks.shape[0] if use_marks else n_steps // stride) + 2
    mi = 0
    rec_n = np.empty(rows, dtype=np.int64)
    rec_theta = np.empty((rows, d))
    rec_m = np.empty((rows, d))
    rec_v = np.empty((rows, d))
    rec_sigma = np.full((rows, d), np.nan)
    rec_x = np.full((rows, d), np.nan)
    inputs = np.empty((n_steps if keep_inputs else 0, d))
    theta = theta0.copy()
    m = m0.copy()
    v = v0.copy()
    sigma = np.empty(d)
    x = np.empty(d)
    rec_n[0] = n0
    rec_theta[0] = theta
    rec_m[0] = m
    rec_v[0] = v
    row = 1
    bad = -1
    bpow = beta**n0
    for s in range(n_steps):
        bpow *= beta
        gamma = gammas[s]
        for i in range(d):
            u = 0.0
            for _ in range(raw):
                u += _transform(code, p0, p1, vals, cdf, rng.standard_normal() if code == 2 else rng.random())
            u /= raw
            if keep_inputs:
                inputs[s, i] = u
            if map_code == 0:
                x[i] = u - theta[i]
            else:
                x[i] = const
        for i in range(d):
            m[i] = alpha * m[i] + (1.0 - alpha) * x[i]
            v[i] = beta * v[i] + (1.0 - beta) * x[i] * x[i]
            vhat = v[i] / (1.0 - bpow) if bias_correction else v[i]
            if eps_inside:
                sigma[i] = 1.0 / np.sqrt(vhat + eps)
            else:
                sigma[i] = 1.0 / (np.sqrt(vhat) + eps)
            theta[i] = theta[i] + gamma * sigma[i] * m[i]
            if not (np.isfinite(theta[i]) and np.isfinite(m[i]) and np.isfinite(v[i])):
                bad = s
        if use_marks:
            hit = mi < marks.shape[0] and marks[mi] == s + 1
            if hit:
                mi += 1
        else:
            hit = (s + 1) % stride == 0
        if bad >= 0 or hit:
            if row < rows:
                rec_n[row] = n0 + s + 1
                rec_theta[row] = theta
                rec_m[row] = m
                rec_v[row] = v
                rec_sigma[row] = sigma
                rec_x[row] = x
                row += 1
        if bad >= 0:
            break
    return rec_n[:row], rec_theta[:row], rec_m[:row], rec_v[:row], rec_sigma[:row], rec_x[:row], inputs, bad


@numba.njit(**_OPTS)
def field_iid(rng, code, p0, p1, vals, cdf, raw, map_code, const, theta,
              alpha, beta, eps, apow, bpow, n_rep, dxdth, want_deriv, want_first_order):
    """Independent truncated histories of depth ``K = len(apow)``.

    Per replica and component: ``g``; optionally the derivative integrand;
    optionally the per-sample first-order terms.  ``stats`` columns are
    ``h(V), |h'(V)|, h''(V), (sqrt V + eps)^-2 V^-3/2, V^-1/2, X_0``;
    ``fo`` columns are ``paired ftilde sample, S1, S2`` where the factored
    first-order field is ``E[S1] E[X] + E[S2] E[X^3]``.
    """
    k_depth = apow.shape[0]
    d = theta.shape[0]
    g = np.empty((n_rep, d))
    deriv = np.zeros((n_rep, d))
    fo = np.zeros((n_rep, d, 3))
    stats = np.zeros((n_rep, d, 6))
    xs = np.empty(k_depth)
    wv = np.empty(k_depth)
    suf = np.empty(k_depth + 1)
    a_tail = 1.0 - apow[k_depth - 1] * alpha
    for r in range(n_rep):
        for i in range(d):
            for k in range(k_depth):
                u = 0.0
                for _ in range(raw):
                    u += _transform(code, p0, p1, vals, cdf, rng.standard_normal() if code == 2 else rng.random())
                u /= raw
                xs[k] = u - theta[i] if map_code == 0 else const
            mom_a = 0.0
            mom_b1 = 0.0
            vsum = 0.0
            for k in range(k_depth):
                mom_a += apow[k] * xs[k]
                mom_b1 += bpow[k] * xs[k]
                wv[k] = (1.0 - beta) * bpow[k] * xs[k] * xs[k]
                vsum += wv[k]
            mom_a *= 1.0 - alpha
            mom_b1 *= 1.0 - beta
            sv = np.sqrt(vsum)
            den = eps + sv
            g[r, i] = mom_a / den
            h = 1.0 / den
            stats[r, i, 0] = h
            if vsum > 0.0:
                stats[r, i, 1] = 1.0 / (den * den * 2.0 * sv)
                stats[r, i, 2] = 1.0 / (den * den * den * 2.0 * vsum) + 1.0 / (den * den * 4.0 * vsum * sv)
                stats[r, i, 3] = 1.0 / (den * den * vsum * sv)
                stats[r, i, 4] = 1.0 / sv
            else:
                stats[r, i, 1] = np.inf
                stats[r, i, 2] = np.inf
                stats[r, i, 3] = np.inf
                stats[r, i, 4] = np.inf
            stats[r, i, 5] = xs[0]
            if want_deriv:
                t1 = a_tail * h
                t2 = 0.0
                if vsum > 0.0:
                    t2 = mom_a * mom_b1 / (den * den * sv)
                deriv[r, i] = dxdth * (t1 - t2)
            if want_first_order:
                suf[k_depth] = 0.0
                for k in range(k_depth - 1, -1, -1):
                    suf[k] = suf[k + 1] + wv[k]
                pre = 0.0
                paired = 0.0
                s1 = 0.0
                s2 = 0.0
                for k in range(k_depth):
                    vk = pre + suf[k + 1]
                    pre += wv[k]
                    svk = np.sqrt(vk)
                    dk = eps + svk
                    hk = 1.0 / dk
                    hpk = -1.0 / (dk * dk * 2.0 * svk) if vk > 0.0 else -np.inf
                    s1 += apow[k] * hk
                    if hpk == -np.inf:
                        s2 = -np.inf
                        paired = np.nan
                    else:
                        s2 += apow[k] * bpow[k] * hpk
                        paired += apow[k] * (xs[k] * hk + (1.0 - beta) * bpow[k] * hpk * xs[k] ** 3)
                fo[r, i, 0] = (1.0 - alpha) * paired
                fo[r, i, 1] = (1.0 - alpha) * s1
                fo[r, i, 2] = (1.0 - alpha) * (1.0 - beta) * s2
    return g, deriv, fo, stats


@numba.njit(**_OPTS)
def field_chain(rng, code, p0, p1, vals, cdf, raw, map_code, const, thetas,
                alpha, beta, eps, burn, length, dxdth, mean_u, second_u):
    """One stationary chain of a scalar component evaluated at every ``thetas[j]``.

    After ``burn`` steps the exponential sums equal a depth-``burn`` history;
    each of the next ``length`` steps contributes one correlated sample.
    Returns chain averages of ``g`` and of the derivative integrand at each
    theta, and chain averages of four zero-mean control variates.
    """
    n_theta = thetas.shape[0]
    g_sum = np.zeros(n_theta)
    d_sum = np.zeros(n_theta)
    ctl = np.zeros(4)
    s_a = 0.0
    s_b1 = 0.0
    s_b2 = 0.0
    w_a = 0.0
    w_b = 0.0
    quad = map_code == 0
    for t in range(burn + length):
        u = const
        if quad:
            u = 0.0
            for _ in range(raw):
                u += _transform(code, p0, p1, vals, cdf, rng.standard_normal() if code == 2 else rng.random())
            u /= raw
        s_a = alpha * s_a + (1.0 - alpha) * u
        s_b1 = beta * s_b1 + (1.0 - beta) * u
        s_b2 = beta * s_b2 + (1.0 - beta) * u * u
        w_a = alpha * w_a + (1.0 - alpha)
        w_b = beta * w_b + (1.0 - beta)
        if t >= burn:
            if quad:
                ctl[0] += s_a - mean_u * w_a
                ctl[1] += s_b1 - mean_u * w_b
                ctl[2] += s_b2 - second_u * w_b
                ctl[3] += u - mean_u
            for j in range(n_theta):
                th = thetas[j] if quad else 0.0
                mom_a = s_a - th * w_a
                mom_b = s_b1 - th * w_b
                vv = s_b2 - 2.0 * th * s_b1 + th * th * w_b
                if vv < 0.0:
                    vv = 0.0
                sv = np.sqrt(vv)
                den = eps + sv
                g_sum[j] += mom_a / den
                if dxdth != 0.0:
                    t2 = mom_a * mom_b / (den * den * sv) if vv > 0.0 else 0.0
                    d_sum[j] += dxdth * (w_a / den - t2)
    return g_sum / length, d_sum / length, ctl / length


@numba.njit(**_OPTS)
def stationary_state(rng, code, p0, p1, vals, cdf, raw, map_code, const, thetas,
                     alpha, beta, depth):
    """Exponential sums ``(m, v)`` of fresh depth-``depth`` histories at each row of ``thetas``."""
    n_rep, d = thetas.shape
    m = np.zeros((n_rep, d))
    v = np.zeros((n_rep, d))
    for r in range(n_rep):
        for i in range(d):
            sm = 0.0
            sv = 0.0
            for _ in range(depth):
                u = 0.0
                for _ in range(raw):
                    u += _transform(code, p0, p1, vals, cdf, rng.standard_normal() if code == 2 else rng.random())
                u /= raw
                x = u - thetas[r, i] if map_code == 0 else const
                sm = alpha * sm + (1.0 - alpha) * x
                sv = beta * sv + (1.0 - beta) * x * x
            m[r, i] = sm
            v[r, i] = sv
    return m, v
