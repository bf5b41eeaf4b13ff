"""Alternating optimization over beamformers, phases, powers, and decode order.

One outer iteration runs the four stages in a fixed order, each guarded so
the minimum device rate never decreases; the run stops once the relative
improvement drops to kappa2 or the iteration cap is hit.
"""

from dataclasses import dataclass, replace

import numpy as np

from .beamform_gpi import gpi_solve, matched_filter_init, random_unit_beamformers
from .grouping import greedy_group
from .phase_opt import solve_phase
from .power_alloc import solve_power
from .rates import SolutionState, initial_partition, min_device_rate


class StageError(RuntimeError):
    """A stage of the alternating loop failed; .stage names it."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage


@dataclass
class AoResult:
    state: SolutionState
    trace: list      # min device rate: initial value then one entry per iteration
    iterations: int
    converged: bool


def initial_state(cfg, channels, csit=None, rng=None):
    """All sub-messages in the first group, equal power split, flat phases,
    matched-filter beamformers (random behind cfg.random_beam_init)."""
    part = initial_partition(cfg.K, cfg.I, cfg.L_groups)
    v = np.ones(cfg.N + 1, dtype=complex)
    p = np.full((cfg.K, cfg.I), cfg.P_max / cfg.I)
    if cfg.random_beam_init:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        g = random_unit_beamformers(rng, cfg.K, cfg.I, cfg.M)
    else:
        g = matched_filter_init(channels, v, cfg.I, csit=csit)
    return SolutionState(g=g, v=v, p=p, partition=part)


def _irs_inactive(channels, csit):
    """True when H_k v cannot depend on v (IRS-side terms exactly zero)."""
    if csit is not None and csit.mode == "estimated":
        n_irs = csit.H_hat.shape[2] - 1
        if np.any(csit.H_hat[:, :, :n_irs] != 0):
            return False
        m = csit.H_hat.shape[1]
        cols = n_irs + 1
        idx = np.array([r * cols + c for r in range(m) for c in range(n_irs)])
        return (not np.any(csit.Phi[:, idx, :])) and (not np.any(csit.Phi[:, :, idx]))
    return not np.any(channels.h_sr)


def run_ao(cfg, channels, csit=None, rng=None):
    """Alternate beamforming -> phases -> powers -> grouping until kappa2."""
    sigma2 = cfg.noise_power

    def objective(st):
        return min_device_rate(st, channels, sigma2, csit=csit)

    def guarded(cur, cand):
        return cand if objective(cand) >= objective(cur) else cur

    state = initial_state(cfg, channels, csit=csit, rng=rng)
    trace = [objective(state)]
    skip_phase = _irs_inactive(channels, csit)
    converged = False
    it = 0
    for it in range(1, cfg.ao_max_outer + 1):
        try:
            beam = gpi_solve(state, channels, sigma2, cfg.alpha,
                             kappa1=cfg.kappa1, max_iters=cfg.gpi_max_iters, csit=csit)
        except Exception as exc:
            raise StageError("beamforming", exc) from exc
        state = guarded(state, replace(state, g=beam.g))

        if not skip_phase:
            try:
                ph = solve_phase(state, channels, sigma2, alpha=cfg.alpha,
                                 rho_init=cfg.rho_init, rho_decay=cfg.rho_decay,
                                 rho_floor=cfg.rho_floor, max_outer=cfg.phase_max_outer,
                                 max_inner=cfg.phase_max_inner, csit=csit)
            except Exception as exc:
                raise StageError("phase", exc) from exc
            if ph.accepted:
                state = replace(state, v=ph.lift.v)

        try:
            pw = solve_power(state, channels, sigma2, cfg.alpha, cfg.P_max,
                             max_iters=cfg.power_max_iters, csit=csit,
                             linearize_d=cfg.power_linearize_d)
        except Exception as exc:
            raise StageError("power", exc) from exc
        if pw.improved:
            state = replace(state, p=pw.p)

        try:
            grp = greedy_group(state, channels, sigma2, cfg.L_groups,
                               csit=csit, best_so_far=True)
        except Exception as exc:
            raise StageError("grouping", exc) from exc
        state = guarded(state, replace(state, partition=grp.partition))

        r_new = objective(state)
        r_prev = trace[-1]
        trace.append(r_new)
        if (r_new - r_prev) / max(r_prev, 1e-12) <= cfg.kappa2:
            converged = True
            break

    state.validate(cfg.P_max)
    return AoResult(state=state, trace=trace, iterations=it, converged=converged)
