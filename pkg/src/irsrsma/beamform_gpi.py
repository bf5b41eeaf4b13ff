"""Receive-beamforming optimizer.

The max-min objective over unit-norm beamformers is smoothed with a
LogSumExp of the per-device rates; its stationary points solve an
eigenvector-dependent eigenvalue problem whose iteration matrix collapses to

    A_{k,i} = (g^H Gamma^d g / g^H Gamma^u g) * (Gamma^d)^{-1} Gamma^u * lambda

with lambda the smoothed objective. The SCF solver replaces each beamformer
by the dominant eigenvector of its A; the power-iteration variant folds the
inner eigensolve into a single normalized step per sweep.
"""

from dataclasses import dataclass, replace

import numpy as np

from .channel import lifted_error_matrix
from .numerics import NumericalError, ValidationError
from .rates import subrates_all

LN2 = np.log(2.0)


@dataclass
class GammaPair:
    """Numerator/denominator covariances of one sub-message's rate."""

    up: np.ndarray    # interference + noise + own signal, (M, M)
    down: np.ndarray  # interference + noise only, (M, M)


@dataclass
class BeamResult:
    g: np.ndarray          # (K, I, M) unit-norm beamformers
    objective: float       # smoothed min-rate at the returned beamformers
    iterations: int
    converged: bool


def _signal_error_parts(state, channels, csit):
    """Per-device rank-one signal outer products and error covariances.

    Returns (a, signal, err) with a (K, M) effective vectors,
    signal[n] = a_n a_n^H, and err[n] = V_tilde Phi_n V_tilde^H (zeros in
    perfect mode so both modes share one arithmetic path).
    """
    robust = csit is not None and csit.mode == "estimated"
    comps = csit.H_hat if robust else channels.H
    a = comps @ state.v                                   # (K, M)
    signal = np.einsum("km,kn->kmn", a, np.conj(a))       # (K, M, M)
    m = a.shape[1]
    if robust:
        err = np.stack([lifted_error_matrix(phi, state.v, m) for phi in csit.Phi])
    else:
        err = np.zeros_like(signal)
    return a, signal, err


def gamma_pairs(state, channels, sigma2, csit=None):
    """GammaPair for every (k, i); pairs in one group share the numerator."""
    a, signal, err = _signal_error_parts(state, channels, csit)
    m = a.shape[1]
    eye = np.eye(m)
    part = state.partition
    pairs = {}
    for l, grp in enumerate(part.groups):
        if not grp:
            continue
        up_base = sigma2 * eye.astype(complex)
        for (n, j) in part.undecoded(l):
            up_base = up_base + state.p[n, j] * (signal[n] + err[n])
        for (k, i) in grp:
            down = up_base - state.p[k, i] * signal[k]
            pairs[(k, i)] = GammaPair(up=up_base, down=down)
    return pairs


def build_gammas(state, channels, sigma2, k, i, csit=None):
    """GammaPair of a single sub-message (strictly PD for sigma2 > 0)."""
    state.partition.group_of(k, i)
    return gamma_pairs(state, channels, sigma2, csit=csit)[(k, i)]


def rate_from_gammas(g, pair):
    """log2 of the generalized Rayleigh quotient; equals the SGD rate."""
    up = float(np.real(np.vdot(g, pair.up @ g)))
    down = float(np.real(np.vdot(g, pair.down @ g)))
    return np.log2(up / down)


def softmin(values, alpha):
    """Smoothed minimum -alpha log(mean exp(-x/alpha)); lies in
    [min, min + alpha log K]. Computed with max-subtraction."""
    values = np.asarray(values, dtype=float)
    base = values.min()
    z = np.exp(-(values - base) / alpha)
    return float(base - alpha * np.log(z.mean()))


def softmin_weights(values, alpha):
    """Softmax weights of the smoothed minimum (sum to one)."""
    values = np.asarray(values, dtype=float)
    z = np.exp(-(values - values.min()) / alpha)
    return z / z.sum()


def _pair_rates(state, pairs):
    r = np.zeros((state.K, state.I))
    for (k, i), pair in pairs.items():
        r[k, i] = rate_from_gammas(state.g[k, i], pair)
    return r


def smoothed_objective(state, channels, sigma2, alpha, csit=None):
    """LogSumExp-smoothed minimum device rate at the current beamformers."""
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    rates = subrates_all(state, channels, sigma2, csit=csit)
    return softmin(rates.sum(axis=1), alpha)


def smoothed_objective_grad_g(state, channels, sigma2, alpha, csit=None):
    """Conjugate-coordinate gradient d f / d g* per (k, i), shape (K, I, M).

    The real 2M-dimensional gradient over [Re g; Im g] is twice the real and
    imaginary parts of these entries.
    """
    pairs = gamma_pairs(state, channels, sigma2, csit=csit)
    rates = _pair_rates(state, pairs)
    w = softmin_weights(rates.sum(axis=1), alpha)
    grad = np.zeros_like(state.g)
    for (k, i), pair in pairs.items():
        g = state.g[k, i]
        ug = pair.up @ g
        dg = pair.down @ g
        qu = float(np.real(np.vdot(g, ug)))
        qd = float(np.real(np.vdot(g, dg)))
        grad[k, i] = (w[k] / LN2) * (ug / qu - dg / qd)
    return grad


def build_A(state, channels, sigma2, alpha, k, i, csit=None, _pairs=None, _lam=None):
    """Collapsed iteration matrix of sub-message (k, i) at the current state."""
    pairs = _pairs if _pairs is not None else gamma_pairs(state, channels, sigma2, csit=csit)
    if _lam is None:
        rates = _pair_rates(state, pairs)
        _lam = softmin(rates.sum(axis=1), alpha)
    pair = pairs[(k, i)]
    g = state.g[k, i]
    qu = float(np.real(np.vdot(g, pair.up @ g)))
    qd = float(np.real(np.vdot(g, pair.down @ g)))
    return (qd / qu) * _lam * np.linalg.solve(pair.down, pair.up)


def mmse_beamformers(state, channels, sigma2, csit=None):
    """Whitened matched filters (Gamma^d)^{-1} H_k v, normalized; (K, I, M)."""
    pairs = gamma_pairs(state, channels, sigma2, csit=csit)
    robust = csit is not None and csit.mode == "estimated"
    comps = csit.H_hat if robust else channels.H
    a = comps @ state.v
    out = np.zeros_like(state.g)
    for (k, i), pair in pairs.items():
        g = np.linalg.solve(pair.down, a[k])
        out[k, i] = g / np.linalg.norm(g)
    return out


def matched_filter_init(channels, v, n_sub, csit=None):
    """Unit-norm matched filters H_k v / ||H_k v||, repeated over sub-messages."""
    comps = csit.H_hat if (csit is not None and csit.mode == "estimated") else channels.H
    a = comps @ v
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    base = a / safe
    zero = (norms[:, 0] == 0)
    if np.any(zero):  # dead channel: fall back to the first canonical basis vector
        base[zero] = 0.0
        base[zero, 0] = 1.0
    return np.repeat(base[:, None, :], n_sub, axis=1).astype(complex)


def random_unit_beamformers(rng, k, n_sub, m):
    g = rng.standard_normal((k, n_sub, m)) + 1j * rng.standard_normal((k, n_sub, m))
    return g / np.linalg.norm(g, axis=2, keepdims=True)


def _dominant_eigvec(a):
    """Dominant eigenvector of a general (diagonalizable) matrix."""
    w, u = np.linalg.eig(a)
    vec = u[:, np.argmax(w.real)]
    return vec / np.linalg.norm(vec)


def _align_phase(vec, ref):
    """Rotate vec's free phase so <ref, vec> is real nonnegative."""
    inner = np.vdot(ref, vec)
    if abs(inner) > 0:
        vec = vec * (np.conj(inner) / abs(inner))
    return vec


def _iterate(state, channels, sigma2, alpha, kappa1, max_iters, csit, step):
    pairs = gamma_pairs(state, channels, sigma2, csit=csit)
    g = state.g.copy()
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        work = replace(state, g=g)
        rates = _pair_rates(work, pairs)
        lam = softmin(rates.sum(axis=1), alpha)
        new_g = g.copy()
        for (k, i), pair in pairs.items():
            a_mat = build_A(work, channels, sigma2, alpha, k, i,
                            csit=csit, _pairs=pairs, _lam=lam)
            new_g[k, i] = step(a_mat, g[k, i], pair)
        num = sum(np.linalg.norm(new_g[k, i] - g[k, i]) for (k, i) in pairs)
        den = sum(np.linalg.norm(g[k, i]) for (k, i) in pairs)
        g = new_g
        if num / den <= kappa1:
            converged = True
            break
    rates = _pair_rates(replace(state, g=g), pairs)
    return BeamResult(g=g, objective=softmin(rates.sum(axis=1), alpha),
                      iterations=it, converged=converged)


def scf_solve(state, channels, sigma2, alpha, kappa1=1e-4, max_iters=200, csit=None):
    """Fixed-point sweep: each beamformer jumps to the dominant eigenvector
    of its iteration matrix. Stops on the absolute change sum <= kappa1."""

    def step(a_mat, g_prev, _pair):
        return _align_phase(_dominant_eigvec(a_mat), g_prev)

    # absolute stop rule: scale kappa1 back up by the unit-norm denominator
    n_pairs = state.K * state.I
    return _iterate(state, channels, sigma2, alpha, kappa1 / n_pairs,
                    max_iters, csit, step)


def gpi_solve(state, channels, sigma2, alpha, kappa1=1e-4, max_iters=200, csit=None):
    """Generalized power iteration: one normalized power step per sweep.
    Stops on the relative change sum <= kappa1."""

    def step(a_mat, g_prev, pair):
        y = a_mat @ g_prev
        norm = np.linalg.norm(y)
        if norm == 0:
            # only reachable when the smoothed objective is exactly zero;
            # the scalar factor then hides the direction, so recover it
            y = np.linalg.solve(pair.down, pair.up @ g_prev)
            norm = np.linalg.norm(y)
            if norm == 0:
                raise NumericalError("power step annihilated a beamformer")
        return y / norm

    return _iterate(state, channels, sigma2, alpha, kappa1, max_iters, csit, step)
