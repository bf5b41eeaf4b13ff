"""IRS phase-shift optimizer over the lifted matrix V = v v^H.

Every rate enters through affine trace forms u_{k,i}(V) = log2(tr(U V) + c)
and d_{k,i}(V) = log2(tr(D V) + c), both concave in V. One outer round
linearizes d (a global upper bound) and the spectral norm (a global lower
bound) at the current anchor, then runs projected gradient ascent on the
smoothed min-rate minus the rank-one penalty (tr V - ||V||_2)/(2 rho) over
{V PSD, diag V = 1}. rho decays geometrically so the penalty eventually
forces V back to rank one; the recovered phase vector is refined by a
per-element grid pass and accepted only if the exact objective does not
decrease.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .channel import gtilde_error_matrix
from .numerics import (NumericalError, RANK_ONE_TOL, ValidationError,
                       hermitian_eig, psd_project)
from .rates import min_device_rate

LN2 = np.log(2.0)
DYKSTRA_MAX_SWEEPS = 500
DYKSTRA_TOL = 1e-10
ARMIJO_C = 1e-4


@dataclass
class PhaseLift:
    V: np.ndarray   # (N+1, N+1) Hermitian, unit diagonal, PSD
    v: np.ndarray   # (N+1,) unit modulus, last entry 1

    def rank_one_residual(self):
        w, _ = hermitian_eig(self.V, atol=1e-6)
        return float(np.real(np.trace(self.V)) - w[0])


@dataclass
class PhaseResult:
    lift: PhaseLift
    objective: float        # exact min device rate at the returned v
    accepted: bool          # False when the incoming v was kept
    residuals: list         # tr(V) - ||V||_2 after each outer round
    surrogates: list        # smoothed surrogate value after each outer round


def trace_terms(state, channels, sigma2, csit=None):
    """Affine coefficients (u_mat, d_mat, c) of every (k, i) rate in V.

    u_mat/d_mat are (K, I, N+1, N+1) Hermitian stacks; c = ||g||^2 sigma^2.
    In estimated mode the signal matrices use H_hat and both forms carry the
    lifted error covariances (the own-device error stays in d).
    """
    robust = csit is not None and csit.mode == "estimated"
    comps = csit.H_hat if robust else channels.H
    k_dev, m, cols = comps.shape
    part = state.partition
    n_sub = state.I
    u_mat = np.zeros((k_dev, n_sub, cols, cols), dtype=complex)
    d_mat = np.zeros_like(u_mat)
    c = np.zeros((k_dev, n_sub))
    for l, grp in enumerate(part.groups):
        undec = part.undecoded(l)
        for (k, i) in grp:
            g = state.g[k, i]
            b = np.conj(comps.transpose(0, 2, 1)) @ g        # (K, N+1) = H_n^H g
            sig = np.einsum("ka,kb->kab", b, np.conj(b))     # (K, N+1, N+1)
            if robust:
                errm = np.stack([gtilde_error_matrix(phi, g, m) for phi in csit.Phi])
            else:
                errm = np.zeros_like(sig)
            acc = np.zeros((cols, cols), dtype=complex)
            for (n, j) in undec:
                acc = acc + state.p[n, j] * (sig[n] + errm[n])
            u_mat[k, i] = acc
            d_mat[k, i] = acc - state.p[k, i] * sig[k]
            c[k, i] = float(np.real(np.vdot(g, g))) * sigma2
    return u_mat, d_mat, c


def _trace_with(mat, v_mat):
    """Re tr(mat V) batched over leading axes of mat."""
    return np.real(np.einsum("...ab,ba->...", mat, v_mat))


def eval_u_d(state, channels, sigma2, k, i, v_mat, csit=None):
    """(u, d) trace forms of sub-message (k, i) at a lifted matrix V."""
    v_mat = np.asarray(v_mat)
    cols = len(state.v)
    if v_mat.shape != (cols, cols):
        raise ValidationError(f"V must be {cols}x{cols}, got {v_mat.shape}")
    u_mat, d_mat, c = trace_terms(state, channels, sigma2, csit=csit)
    u = np.log2(_trace_with(u_mat[k, i], v_mat) + c[k, i])
    d = np.log2(_trace_with(d_mat[k, i], v_mat) + c[k, i])
    return float(u), float(d)


def grad_V_d(state, channels, sigma2, k, i, v_t, csit=None):
    """Gradient of d_{k,i} at anchor V_t, in the tr(grad^T (V - V_t)) convention."""
    u_mat, d_mat, c = trace_terms(state, channels, sigma2, csit=csit)
    den = _trace_with(d_mat[k, i], v_t) + c[k, i]
    return d_mat[k, i].T / (den * LN2)


def rates_from_lift(u_mat, d_mat, c, v):
    """Exact (K, I) rates at a rank-one lift v (quadratic trace forms)."""
    qu = np.real(np.einsum("a,kiab,b->ki", np.conj(v), u_mat, v)) + c
    qd = np.real(np.einsum("a,kiab,b->ki", np.conj(v), d_mat, v)) + c
    return np.log2(qu / qd)


def project_elliptope(v0, max_sweeps=DYKSTRA_MAX_SWEEPS, tol=DYKSTRA_TOL):
    """Dykstra alternating projections onto {PSD} ∩ {unit diagonal}.

    Sweeps end on the diagonal step, so the diagonal is exact; convergence is
    declared when the iterate stops moving, or moves slowly while already
    PSD to within 1e-10 * dim (the sequence then sits on the feasible set).
    """
    x = 0.5 * (v0 + v0.conj().T)
    dim = x.shape[0]
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for sweep in range(max_sweeps):
        y = psd_project(x + p, atol=1e-6)
        p = x + p - y
        z = y + q
        x_new = z.copy()
        np.fill_diagonal(x_new, 1.0)
        q = z - x_new
        move = np.linalg.norm(x_new - x)
        x = x_new
        if move <= tol * dim:
            return x
        if move <= 1e-7 * dim and sweep % 5 == 0:
            if np.linalg.eigvalsh(x).min() >= -1e-10 * dim:
                return x
    raise NumericalError("Dykstra projection did not converge")


def _softmin_and_weights(values, alpha):
    base = values.min()
    z = np.exp(-(values - base) / alpha)
    return float(base - alpha * np.log(z.mean())), z / z.sum()


def solve_phase(state, channels, sigma2, alpha=0.1, rho_init=1.0, rho_decay=0.5,
                rho_floor=1e-4, max_outer=16, max_inner=40, rank_tol=RANK_ONE_TOL,
                grid_points=64, csit=None, trace_csv=None):
    """Run the penalized SCA chain and recover a unit-modulus phase vector.

    The returned v is accepted only if the exact min device rate does not
    decrease; otherwise the incoming state.v is kept and accepted is False.
    """
    u_mat, d_mat, c = trace_terms(state, channels, sigma2, csit=csit)
    cols = len(state.v)
    eye = np.eye(cols)

    def true_objective(v):
        return min_device_rate(replace(state, v=v), channels, sigma2, csit=csit)

    v_in = state.v.copy()
    obj_in = true_objective(v_in)

    v_mat = project_elliptope(np.outer(v_in, np.conj(v_in)))
    rho = rho_init
    residuals = []
    surrogates = []

    for _ in range(max_outer):
        v_anchor = v_mat
        den_t = _trace_with(d_mat, v_anchor) + c      # (K, I)
        d_t = np.log2(den_t)
        w_eig, u_eig = hermitian_eig(v_anchor, atol=1e-6)
        spec_t = w_eig[0]
        lam_vec = u_eig[:, 0]
        lam_outer = np.outer(lam_vec, np.conj(lam_vec))

        def surrogate(vm):
            qu = _trace_with(u_mat, vm) + c
            d_lin = d_t + np.real(np.einsum("kiab,ab->ki", d_mat.transpose(0, 1, 3, 2),
                                            vm - v_anchor)) / (den_t * LN2)
            dev = (np.log2(qu) - d_lin).sum(axis=1)
            val, _ = _softmin_and_weights(dev, alpha)
            pen = (np.real(np.trace(vm)) - spec_t
                   - np.real(np.sum(lam_outer * (vm - v_anchor)))) / (2.0 * rho)
            return val - pen

        def surrogate_grad(vm):
            qu = _trace_with(u_mat, vm) + c
            d_lin = d_t + np.real(np.einsum("kiab,ab->ki", d_mat.transpose(0, 1, 3, 2),
                                            vm - v_anchor)) / (den_t * LN2)
            dev = (np.log2(qu) - d_lin).sum(axis=1)
            _, w = _softmin_and_weights(dev, alpha)
            grad = np.zeros_like(vm)
            for k in range(u_mat.shape[0]):
                for i in range(u_mat.shape[1]):
                    grad += w[k] * (u_mat[k, i] / (qu[k, i] * LN2)
                                    - d_mat[k, i] / (den_t[k, i] * LN2))
            grad -= (eye - lam_outer) / (2.0 * rho)
            return 0.5 * (grad + grad.conj().T)

        f_cur = surrogate(v_mat)
        step_cap = 2.0 * cols  # elliptope diameter scale; keeps Dykstra fast
        for _ in range(max_inner):
            grad = surrogate_grad(v_mat)
            gnorm = np.linalg.norm(grad)
            direction = grad if gnorm <= step_cap else grad * (step_cap / gnorm)
            eta = 1.0
            moved = False
            while eta > 1e-12:
                cand = project_elliptope(v_mat + eta * direction)
                advance = np.real(np.sum(np.conj(grad) * (cand - v_mat)))
                f_cand = surrogate(cand)
                if advance > 1e-15 and f_cand >= f_cur + ARMIJO_C * advance:
                    v_mat = cand
                    f_cur = f_cand
                    moved = True
                    break
                eta *= 0.5
            if not moved:
                break

        w_eig, _ = hermitian_eig(v_mat, atol=1e-6)
        residual = float(np.real(np.trace(v_mat)) - w_eig[0])
        residuals.append(residual)
        surrogates.append(f_cur)
        at_floor = rho <= rho_floor
        rho = max(rho * rho_decay, rho_floor)
        if at_floor and residual < rank_tol:
            break

    # rank-one recovery: entrywise phases of the dominant eigenvector
    _, u_eig = hermitian_eig(v_mat, atol=1e-6)
    top = u_eig[:, 0]
    if abs(top[-1]) > 1e-12:
        top = top * (np.conj(top[-1]) / abs(top[-1]))
    v_cand = np.ones(cols, dtype=complex)
    mags = np.abs(top[:-1])
    v_cand[:-1] = np.where(mags > 1e-12, top[:-1] / np.where(mags > 1e-12, mags, 1.0), 1.0)

    # one per-element refinement pass on the exact rank-one objective
    phases = np.exp(2j * np.pi * np.arange(grid_points) / grid_points)
    cur = float(np.min(rates_from_lift(u_mat, d_mat, c, v_cand).sum(axis=1)))
    for n in range(cols - 1):
        best_phase = v_cand[n]
        for ph in phases:
            trial = v_cand.copy()
            trial[n] = ph
            val = float(np.min(rates_from_lift(u_mat, d_mat, c, trial).sum(axis=1)))
            if val > cur:
                cur = val
                best_phase = ph
        v_cand[n] = best_phase

    obj_cand = true_objective(v_cand)
    if obj_cand >= obj_in:
        out_v, out_obj, accepted = v_cand, obj_cand, True
    else:
        out_v, out_obj, accepted = v_in, obj_in, False

    if trace_csv is not None:
        with open(trace_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["outer", "surrogate", "penalty_residual"])
            for idx, (s, r) in enumerate(zip(surrogates, residuals)):
                writer.writerow([idx, f"{s:.6g}", f"{r:.6g}"])

    lift = PhaseLift(V=v_mat, v=out_v)
    return PhaseResult(lift=lift, objective=out_obj, accepted=accepted,
                       residuals=residuals, surrogates=surrogates)
