"""Per-sub-message rates under successive group decoding.

Decoding runs through the ordered groups Q_1..Q_L; within group l every
sub-message is detected linearly with all not-yet-decoded sub-messages
treated as noise, and decoded groups are cancelled. Rates are bits/s/Hz.
"""

from dataclasses import dataclass, replace

import numpy as np

from .channel import (UNIT_MODULUS_ATOL, check_phase_vector, stack_rows,
                      vtilde_quadratic)
from .numerics import ValidationError


def all_pairs(k, i):
    return tuple((dev, sub) for dev in range(k) for sub in range(i))


@dataclass(frozen=True)
class GroupPartition:
    """Ordered decoding groups over the (device, sub-message) index pairs."""

    K: int
    I: int
    groups: tuple  # tuple of tuples of (k, i) pairs; position = decode order

    def __post_init__(self):
        groups = tuple(tuple(tuple(p) for p in grp) for grp in self.groups)
        object.__setattr__(self, "groups", groups)
        seen = {}
        for l, grp in enumerate(groups):
            for pair in grp:
                if pair in seen:
                    raise ValidationError(f"sub-message {pair} appears in two groups")
                seen[pair] = l
        expected = set(all_pairs(self.K, self.I))
        if set(seen) != expected:
            raise ValidationError("groups must partition all (device, sub-message) pairs")
        object.__setattr__(self, "_index", seen)
        # suffix unions: pairs not yet cancelled when group l is decoded
        suffix = []
        acc = []
        for grp in reversed(groups):
            acc = list(grp) + acc
            suffix.append(tuple(acc))
        object.__setattr__(self, "_undecoded", tuple(reversed(suffix)))

    @property
    def L(self):
        return len(self.groups)

    def group_of(self, k, i):
        try:
            return self._index[(k, i)]
        except KeyError:
            raise ValidationError(f"sub-message ({k}, {i}) not in partition") from None

    def undecoded(self, l):
        """Pairs in groups l..L-1 (the interference set at stage l)."""
        return self._undecoded[l]

    def move(self, k, i, to_l):
        """New partition with (k, i) moved to group to_l."""
        src = self.group_of(k, i)
        groups = [list(grp) for grp in self.groups]
        groups[src].remove((k, i))
        groups[to_l].append((k, i))
        return GroupPartition(self.K, self.I, tuple(tuple(g) for g in groups))

    def to_json_obj(self):
        return [[list(p) for p in grp] for grp in self.groups]

    @classmethod
    def from_json_obj(cls, obj, k, i):
        return cls(k, i, tuple(tuple(tuple(p) for p in grp) for grp in obj))


def initial_partition(k, i, l_groups):
    """Everything in Q_1, remaining groups empty."""
    groups = [all_pairs(k, i)] + [()] * (l_groups - 1)
    return GroupPartition(k, i, tuple(groups))


def full_sic_partition(k, i, order=None):
    """One singleton group per sub-message, in the given decode order."""
    pairs = list(order) if order is not None else list(all_pairs(k, i))
    return GroupPartition(k, i, tuple((tuple(p),) for p in pairs))


@dataclass
class SolutionState:
    """Current iterate: beamformers, IRS phases, powers, decode partition."""

    g: np.ndarray            # (K, I, M) unit-norm receive beamformers
    v: np.ndarray            # (N+1,) unit-modulus phases, last entry 1
    p: np.ndarray            # (K, I) nonnegative powers, per-device sum <= P_max
    partition: GroupPartition

    @property
    def K(self):
        return self.g.shape[0]

    @property
    def I(self):
        return self.g.shape[1]

    def validate(self, p_max, atol=1e-9):
        norms = np.linalg.norm(self.g, axis=2)
        if np.max(np.abs(norms - 1.0)) > atol:
            raise ValidationError("beamformers must be unit norm")
        check_phase_vector(self.v, len(self.v) - 1)
        if np.min(self.p) < -atol:
            raise ValidationError("powers must be nonnegative")
        if np.max(self.p.sum(axis=1)) > p_max * (1.0 + 1e-9) + atol:
            raise ValidationError("per-device power budget exceeded")
        if (self.partition.K, self.partition.I) != (self.K, self.I):
            raise ValidationError("partition shape disagrees with state")


def _mode_arrays(state, channels, csit):
    """Effective vectors a_n = H_n v (or Hhat_n v) and receive-side error
    quadratics e[k] = g-free part g^H Vt Phi_k Vt^H g evaluated lazily.

    Returns (a, err) with a shape (K, M); err is None in perfect mode, else a
    callable err(g) -> (K,) real given one beamformer.
    """
    robust = csit is not None and csit.mode == "estimated"
    comps = csit.H_hat if robust else channels.H
    a = comps @ state.v
    if not robust:
        return a, None

    def err(g):
        return np.array([vtilde_quadratic(phi, g, state.v) for phi in csit.Phi])

    return a, err


def subrates_all(state, channels, sigma2, csit=None):
    """All 2K sub-message rates as a (K, I) array (perfect or lower-bound)."""
    robust = csit is not None and csit.mode == "estimated"
    a, err = _mode_arrays(state, channels, csit)
    part = state.partition
    out = np.zeros((state.K, state.I))
    for l, grp in enumerate(part.groups):
        undec = part.undecoded(l)
        for (k, i) in grp:
            g = state.g[k, i]
            gain = np.abs(np.conj(g) @ a.T) ** 2        # (K,) |g^H a_n|^2
            noise = float(np.real(np.vdot(g, g))) * sigma2
            den = noise
            if robust:
                e = err(g)
                den += state.p[k, i] * e[k]
            for (n, j) in undec:
                if (n, j) == (k, i):
                    continue
                den += state.p[n, j] * gain[n]
                if robust:
                    den += state.p[n, j] * e[n]
            num = state.p[k, i] * gain[k]
            out[k, i] = np.log2(1.0 + num / den)
    return out


def subrate_perfect(state, channels, k, i, sigma2):
    """Rate of sub-message (k, i) with known channels."""
    state.partition.group_of(k, i)  # membership check
    return float(subrates_all(state, channels, sigma2)[k, i])


def subrate_lower(state, csit, k, i, sigma2):
    """Lower bound on the expected rate of (k, i) under estimated CSIT.

    Perfect-mode models delegate to the known-channel rate on H_hat.
    """
    state.partition.group_of(k, i)
    if csit.mode == "perfect":
        return float(subrates_all(state, _hat_channels(csit), sigma2)[k, i])
    d = csit.Phi[0].shape[0]
    if d != state.g.shape[2] * len(state.v):
        raise ValidationError("Phi dimension disagrees with lifted beamformers")
    return float(subrates_all(state, None, sigma2, csit=csit)[k, i])


def _hat_channels(csit):
    """Wrap H_hat as a channel container for the perfect-rate path."""
    from .channel import ChannelSet
    k, m, cols = csit.H_hat.shape
    n = cols - 1
    return ChannelSet(H_rb=np.zeros((m, n)), h_sr=np.zeros((k, n)),
                      h_d=np.zeros((k, m)), H=csit.H_hat)


def device_rates(state, channels, sigma2, csit=None):
    """Per-device rates sum_i r_{k,i}; their min is the design objective."""
    return subrates_all(state, channels, sigma2, csit=csit).sum(axis=1)


def min_device_rate(state, channels, sigma2, csit=None):
    return float(np.min(device_rates(state, channels, sigma2, csit=csit)))


def simulate_sgd_sinr(state, channels, sigma2, n_symbols, rng):
    """Symbol-level successive group decoding; empirical SINR per (k, i).

    Unit-power Gaussian symbols are transmitted, each stage detects its group
    with the state's beamformers, and decoded groups are subtracted using the
    true symbols (genie-aided cancellation).
    """
    if n_symbols < 10_000:
        raise ValidationError("need at least 1e4 symbols for stable SINR estimates")
    k_dev, n_sub = state.K, state.I
    m = state.g.shape[2]
    h_eff = channels.H @ state.v                     # (K, M)
    x = (rng.standard_normal((k_dev, n_sub, n_symbols))
         + 1j * rng.standard_normal((k_dev, n_sub, n_symbols))) / np.sqrt(2.0)
    w = (rng.standard_normal((m, n_symbols))
         + 1j * rng.standard_normal((m, n_symbols))) * np.sqrt(sigma2 / 2.0)
    tx = np.einsum("ki,kin->kn", np.sqrt(state.p), x)  # (K, n)
    y = h_eff.T @ tx + w                               # (M, n)

    sinr = np.zeros((k_dev, n_sub))
    for grp in state.partition.groups:
        for (k, i) in grp:
            g = state.g[k, i]
            xhat = np.conj(g) @ y                      # (n,)
            coef = (np.conj(g) @ h_eff[k]) * np.sqrt(state.p[k, i])
            sig = coef * x[k, i]
            resid = xhat - sig
            sinr[k, i] = np.mean(np.abs(sig) ** 2) / np.mean(np.abs(resid) ** 2)
        for (k, i) in grp:
            y -= np.outer(h_eff[k], np.sqrt(state.p[k, i]) * x[k, i])
    return sinr


def analytic_sinr(state, channels, sigma2):
    """SINR implied by the rate formula, per (k, i)."""
    r = subrates_all(state, channels, sigma2)
    return 2.0 ** r - 1.0
