"""Per-device transmit power allocation over the box-simplex polytope.

Each rate is log2(qu . p + c) - log2(qd . p + c) with nonnegative coefficient
tensors, so the smoothed min-rate is maximized directly by projected gradient
ascent with an exact per-device projection. The Taylor-linearized-d variant
(successive convex approximation) sits behind `linearize_d`.
"""

from dataclasses import dataclass, replace

import numpy as np

from .channel import vtilde_quadratic
from .rates import min_device_rate

LN2 = np.log(2.0)
ARMIJO_C = 1e-4


@dataclass
class PowerResult:
    p: np.ndarray        # (K, I) feasible powers
    objective: float     # exact min device rate at the returned powers
    improved: bool       # False when the input allocation was kept (stalled)


def linear_terms(state, channels, sigma2, csit=None):
    """Coefficients (qu, qd, c) of every rate as an affine function of p.

    qu/qd have shape (K, I, K, I): the [k, i, n, j] entry multiplies p[n, j]
    in the numerator/denominator of rate (k, i). c = ||g||^2 sigma^2.
    """
    robust = csit is not None and csit.mode == "estimated"
    comps = csit.H_hat if robust else channels.H
    a = comps @ state.v                       # (K, M)
    part = state.partition
    k_dev, n_sub = state.K, state.I
    qu = np.zeros((k_dev, n_sub, k_dev, n_sub))
    qd = np.zeros_like(qu)
    c = np.zeros((k_dev, n_sub))
    for l, grp in enumerate(part.groups):
        undec = part.undecoded(l)
        for (k, i) in grp:
            g = state.g[k, i]
            gain = np.abs(np.conj(g) @ a.T) ** 2              # (K,)
            if robust:
                err = np.array([vtilde_quadratic(phi, g, state.v) for phi in csit.Phi])
            else:
                err = np.zeros(k_dev)
            for (n, j) in undec:
                qu[k, i, n, j] = gain[n] + err[n]
                qd[k, i, n, j] = gain[n] + err[n]
            qd[k, i, k, i] = err[k]  # own signal term leaves, own error stays
            c[k, i] = float(np.real(np.vdot(g, g))) * sigma2
    return qu, qd, c


def grad_p_d(state, channels, sigma2, k, i, p_t=None, csit=None):
    """Gradient of d_{k,i} over the flattened power vector, shape (K, I).

    Entries for undecoded interferers carry the trace coefficient; the own
    entry and decoded entries are zero (own-error term appears only in
    estimated-CSIT mode).
    """
    if p_t is None:
        p_t = state.p
    qu, qd, c = linear_terms(state, channels, sigma2, csit=csit)
    den = float(np.sum(qd[k, i] * p_t)) + c[k, i]
    return qd[k, i] / (den * LN2)


def project_power(p_raw, p_max):
    """Per-device Euclidean projection onto {p >= 0, sum_i p_i <= p_max}."""
    p_raw = np.atleast_2d(np.asarray(p_raw, dtype=float))
    out = np.empty_like(p_raw)
    for k in range(p_raw.shape[0]):
        x = p_raw[k]
        y = np.maximum(x, 0.0)
        if y.sum() <= p_max:
            out[k] = y
            continue
        # on the budget face: shift down uniformly with re-clipping
        u = np.sort(x)[::-1]
        css = np.cumsum(u)
        j = np.arange(1, len(x) + 1)
        rho = np.max(np.where(u - (css - p_max) / j > 0, j, 0))
        tau = (css[rho - 1] - p_max) / rho
        out[k] = np.maximum(x - tau, 0.0)
    return out


def _ascend(p0, objective, gradient, project, max_iters):
    """Projected gradient ascent with backtracking; returns visited iterates."""
    p = p0
    path = [p0]
    f_cur = objective(p)
    for _ in range(max_iters):
        grad = gradient(p)
        eta = 1.0
        moved = False
        while eta > 1e-14:
            cand = project(p + eta * grad)
            advance = float(np.sum(grad * (cand - p)))
            if advance > 1e-18 and objective(cand) >= f_cur + ARMIJO_C * advance:
                p = cand
                f_cur = objective(cand)
                path.append(p)
                moved = True
                break
            eta *= 0.5
        if not moved:
            break
    return path


def solve_power(state, channels, sigma2, alpha, p_max, max_iters=500,
                csit=None, linearize_d=False):
    """Maximize the smoothed min device rate over feasible powers.

    Keeps the best iterate under the exact min-rate objective; if nothing
    beats the input allocation the input is returned with improved=False.
    """
    qu, qd, c = linear_terms(state, channels, sigma2, csit=csit)

    def smoothed(pv):
        nu = np.einsum("kinj,nj->ki", qu, pv) + c
        de = np.einsum("kinj,nj->ki", qd, pv) + c
        dev = (np.log2(nu) - np.log2(de)).sum(axis=1)
        base = dev.min()
        return float(base - alpha * np.log(np.exp(-(dev - base) / alpha).mean()))

    def grad_exact(pv):
        nu = np.einsum("kinj,nj->ki", qu, pv) + c
        de = np.einsum("kinj,nj->ki", qd, pv) + c
        dev = (np.log2(nu) - np.log2(de)).sum(axis=1)
        z = np.exp(-(dev - dev.min()) / alpha)
        w = z / z.sum()
        coef = w[:, None] / LN2
        return (np.einsum("ki,kinj->nj", coef / nu, qu)
                - np.einsum("ki,kinj->nj", coef / de, qd))

    project = lambda pv: project_power(pv, p_max)
    p0 = state.p.copy()

    if not linearize_d:
        path = _ascend(p0, smoothed, grad_exact, project, max_iters)
    else:
        # paper-faithful mode: re-linearize d around the current point
        path = [p0]
        anchor = p0
        for _ in range(8):
            den_t = np.einsum("kinj,nj->ki", qd, anchor) + c
            d_t = np.log2(den_t)

            def smoothed_lin(pv, den_t=den_t, d_t=d_t, anchor=anchor):
                nu = np.einsum("kinj,nj->ki", qu, pv) + c
                d_lin = d_t + np.einsum("kinj,nj->ki", qd, pv - anchor) / (den_t * LN2)
                dev = (np.log2(nu) - d_lin).sum(axis=1)
                base = dev.min()
                return float(base - alpha * np.log(np.exp(-(dev - base) / alpha).mean()))

            def grad_lin(pv, den_t=den_t, d_t=d_t, anchor=anchor):
                nu = np.einsum("kinj,nj->ki", qu, pv) + c
                d_lin = d_t + np.einsum("kinj,nj->ki", qd, pv - anchor) / (den_t * LN2)
                dev = (np.log2(nu) - d_lin).sum(axis=1)
                z = np.exp(-(dev - dev.min()) / alpha)
                w = z / z.sum()
                coef = w[:, None] / LN2
                return (np.einsum("ki,kinj->nj", coef / nu, qu)
                        - np.einsum("ki,kinj->nj", coef / den_t, qd))

            inner = _ascend(anchor, smoothed_lin, grad_lin, project, max_iters // 8 + 1)
            path.extend(inner[1:])
            if np.linalg.norm(inner[-1] - anchor) <= 1e-12:
                break
            anchor = inner[-1]

    obj_in = min_device_rate(state, channels, sigma2, csit=csit)
    best_p, best_obj = p0, obj_in
    for pv in path[1:]:
        obj = min_device_rate(replace(state, p=pv), channels, sigma2, csit=csit)
        if obj > best_obj:
            best_obj, best_p = obj, pv
    improved = best_obj > obj_in
    if not improved:
        return PowerResult(p=p0, objective=obj_in, improved=False)
    return PowerResult(p=best_p, objective=best_obj, improved=True)
