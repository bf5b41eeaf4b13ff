"""Geometric multipath channel synthesis and the imperfect-CSIT model.

Channels are sums of planar multipath components: complex CN(0,1) gains,
delays uniform on [0, 1/B_s), and half-wavelength ULA steering vectors with
normalized angles theta = sin(phi)/2, phi uniform on [-pi/2, pi/2]. The
composite per-device matrix H_k = [H_rb diag(h_sr_k), h_d_k] folds the IRS
phase vector into h_k = H_k v with v = [e^{j theta_1..N}, 1].
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import UNIT_MODULUS_ATOL, ValidationError


def dbm_to_watt(x):
    """x dBm -> watts."""
    return 10.0 ** ((x - 30.0) / 10.0)


@dataclass
class SystemConfig:
    """All scenario scalars plus the solver tolerances the modules read."""

    M: int = 8                      # BS antennas
    N: int = 8                      # IRS elements
    K: int = 4                      # devices
    I: int = 2                      # sub-messages per device (1 = NOMA)
    L_groups: int = 4               # decoding groups
    B_s: float = 10e6               # bandwidth, Hz
    P_max: float = dbm_to_watt(1.0)     # per-device transmit power, W
    P_max_b: float = dbm_to_watt(30.0)  # receive-beamforming power bound, W
    snr_db: float = 10.0
    sigma2: float | None = None     # noise power, W; None -> P_max * 10^(-snr/10)
    alpha: float = 0.1              # LogSumExp smoothing, bits
    kappa1: float = 1e-4            # beamforming stop tolerance
    kappa2: float = 1e-3            # AO stop tolerance
    rho_init: float = 1.0           # rank-one penalty schedule
    rho_decay: float = 0.5
    rho_floor: float = 1e-4
    path_count_range: tuple = (8, 16)
    L_train: int = 100              # uplink training length, symbols
    seed: int = 0
    csit_mode: str = "perfect"      # perfect | estimated
    # solver iteration caps
    gpi_max_iters: int = 200
    ao_max_outer: int = 30
    phase_max_outer: int = 16
    phase_max_inner: int = 40
    power_max_iters: int = 500
    sigma_draws: int = 2000         # Monte-Carlo draws for Sigma_k
    random_beam_init: bool = False  # random g(0) instead of matched filter
    power_linearize_d: bool = False
    timing: bool = False            # record wall time (breaks byte determinism)

    def __post_init__(self):
        if min(self.M, self.N, self.K) < 1:
            raise ValidationError("M, N, K must all be >= 1")
        if self.I not in (1, 2):
            raise ValidationError("I must be 1 or 2")
        if not 1 <= self.L_groups <= self.K * self.I:
            raise ValidationError("L_groups must lie in [1, K*I]")
        if self.P_max <= 0 or self.P_max_b <= 0:
            raise ValidationError("powers must be positive")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ValidationError("sigma2 must be positive")
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        lo, hi = self.path_count_range
        if not (1 <= lo <= hi):
            raise ValidationError("path_count_range must be a nonempty integer range")
        if self.csit_mode not in ("perfect", "estimated"):
            raise ValidationError("csit_mode must be 'perfect' or 'estimated'")
        if self.L_train < 1:
            raise ValidationError("L_train must be >= 1")

    @property
    def noise_power(self):
        """sigma^2 in watts; derived from the SNR axis unless set explicitly."""
        if self.sigma2 is not None:
            return self.sigma2
        return self.P_max * 10.0 ** (-self.snr_db / 10.0)


@dataclass
class PathSet:
    """Multipath components of one channel (gains, delays, endpoint angles)."""

    gains: np.ndarray     # (P,) complex
    delays: np.ndarray    # (P,) seconds in [0, 1/B_s)
    angles: np.ndarray    # (P,) normalized angles, or (P, 2) = [BS side, IRS side]

    @property
    def count(self):
        return len(self.gains)


def steering(theta, dim):
    """ULA response vectors, entries exp(-j 2 pi m theta); shape (dim, P)."""
    theta = np.atleast_1d(np.asarray(theta))
    return np.exp(-2j * np.pi * np.arange(dim)[:, None] * theta[None, :])


def sample_paths(rng, count_range, b_s, endpoints=1):
    """Draw one PathSet: CN(0,1) gains, U(0, 1/B_s) delays, uniform angles."""
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    gains = (rng.standard_normal(count) + 1j * rng.standard_normal(count)) / np.sqrt(2.0)
    delays = rng.uniform(0.0, 1.0 / b_s, count)
    phi = rng.uniform(-np.pi / 2, np.pi / 2, (count, endpoints))
    angles = np.sin(phi) / 2.0
    if endpoints == 1:
        angles = angles[:, 0]
    return PathSet(gains=gains, delays=delays, angles=angles)


def matrix_from_paths(paths, m, n, b_s):
    """Sum of gain-weighted steering outer products, (m, n)."""
    coef = paths.gains * np.exp(-1j * np.pi * paths.delays * b_s)  # exp(-j2pi tau B_s/2)
    a_bs = steering(paths.angles[:, 0], m)   # (m, P)
    a_irs = steering(paths.angles[:, 1], n)  # (n, P)
    return (a_bs * coef[None, :]) @ a_irs.conj().T


def vector_from_paths(paths, dim, b_s):
    """Sum of gain-weighted steering vectors, (dim,)."""
    coef = paths.gains * np.exp(-1j * np.pi * paths.delays * b_s)
    return steering(paths.angles, dim) @ coef


def _composites(h_rb, h_sr, h_d):
    k, m = h_d.shape
    n = h_rb.shape[1]
    out = np.empty((k, m, n + 1), dtype=complex)
    for dev in range(k):
        out[dev, :, :n] = h_rb * h_sr[dev][None, :]
        out[dev, :, n] = h_d[dev]
    return out


@dataclass
class ChannelSet:
    """One realization: IRS->BS matrix, per-device vectors, composites."""

    H_rb: np.ndarray   # (M, N)
    h_sr: np.ndarray   # (K, N) device -> IRS
    h_d: np.ndarray    # (K, M) device -> BS
    H: np.ndarray = field(default=None)  # (K, M, N+1), H_k = [H_rb diag(h_sr_k), h_d_k]

    def __post_init__(self):
        if self.H is None:
            self.H = _composites(self.H_rb, self.h_sr, self.h_d)

    @property
    def dims(self):
        return self.H_rb.shape[0], self.H_rb.shape[1], self.h_sr.shape[0]  # M, N, K


def sample_channels(cfg, rng):
    """Draw a full ChannelSet for cfg (fresh path sets for every link)."""
    m, n, k = cfg.M, cfg.N, cfg.K
    h_rb = matrix_from_paths(sample_paths(rng, cfg.path_count_range, cfg.B_s, endpoints=2),
                             m, n, cfg.B_s)
    h_sr = np.stack([vector_from_paths(sample_paths(rng, cfg.path_count_range, cfg.B_s), n, cfg.B_s)
                     for _ in range(k)])
    h_d = np.stack([vector_from_paths(sample_paths(rng, cfg.path_count_range, cfg.B_s), m, cfg.B_s)
                    for _ in range(k)])
    return ChannelSet(H_rb=h_rb, h_sr=h_sr, h_d=h_d)


def without_irs(channels):
    """Ablated copy with the IRS-side channels zeroed (direct links only)."""
    return ChannelSet(H_rb=channels.H_rb.copy(),
                      h_sr=np.zeros_like(channels.h_sr),
                      h_d=channels.h_d.copy())


def check_phase_vector(v, n):
    """v must have N unit-modulus entries followed by a trailing 1."""
    v = np.asarray(v)
    if v.shape != (n + 1,):
        raise ValidationError(f"phase vector must have length {n + 1}, got {v.shape}")
    if np.max(np.abs(np.abs(v[:n]) - 1.0)) > UNIT_MODULUS_ATOL:
        raise ValidationError("phase vector entries must be unit modulus")
    if abs(v[n] - 1.0) > UNIT_MODULUS_ATOL:
        raise ValidationError("last phase entry must equal 1")
    return v


def effective_vector(h_k, v):
    """h_k = H_k v, the composite channel under IRS phases v."""
    h_k = np.asarray(h_k)
    check_phase_vector(v, h_k.shape[1] - 1)
    return h_k @ v


def stack_rows(h_k):
    """Row-wise stacking [row_1, ..., row_M]^T -> (M(N+1),) vector."""
    return np.asarray(h_k).reshape(-1)


def unstack_rows(h_tilde, m):
    """Inverse of stack_rows."""
    h_tilde = np.asarray(h_tilde)
    return h_tilde.reshape(m, -1)


def lift_stack(h_k, g, v):
    """Lifted forms (h_tilde, V_tilde, G_tilde) of one composite channel.

    V_tilde h_tilde = H_k v and g^H V_tilde h_tilde = g^H H_k v hold exactly;
    G_tilde = [g_1 I_{N+1}, ..., g_M I_{N+1}].
    """
    h_k = np.asarray(h_k)
    g = np.asarray(g)
    v = np.asarray(v)
    m, cols = h_k.shape
    if g.shape != (m,):
        raise ValidationError(f"beamformer must have length {m}, got {g.shape}")
    if v.shape != (cols,):
        raise ValidationError(f"phase vector must have length {cols}, got {v.shape}")
    h_tilde = stack_rows(h_k)
    v_tilde = np.kron(np.eye(m), v.reshape(1, -1))       # (M, M(N+1))
    g_tilde = np.kron(g.reshape(1, -1), np.eye(cols))    # (N+1, M(N+1))
    return h_tilde, v_tilde, g_tilde


def vtilde_quadratic(phi, g, v):
    """g^H V_tilde Phi V_tilde^H g without forming V_tilde (real scalar)."""
    w = np.kron(g, np.conj(v))
    return float(np.real(np.vdot(w, phi @ w)))


def lifted_error_matrix(phi, v, m):
    """V_tilde Phi V_tilde^H as an (M, M) matrix (receive-side error term)."""
    d = phi.shape[0] // m
    phi4 = phi.reshape(m, d, m, d)
    return np.einsum("n,mnpq,q->mp", v, phi4, np.conj(v))


def gtilde_error_matrix(phi, g, m):
    """G_tilde Phi^dagger G_tilde^H as an (N+1, N+1) matrix (phase-side forms)."""
    d = phi.shape[0] // m
    phi4 = phi.reshape(m, d, m, d)
    return np.einsum("m,p,mnpq->nq", g, np.conj(g), np.conj(phi4))


@dataclass
class CsitModel:
    """Receiver-side channel knowledge: estimates plus error statistics."""

    mode: str                # perfect | estimated
    H_hat: np.ndarray        # (K, M, N+1) estimated composites
    Phi: np.ndarray          # (K, D, D) error covariances, D = M(N+1)
    Sigma: np.ndarray | None = None  # (K, D, D) channel covariances
    L_train: int = 0


def perfect_csit(channels):
    """CsitModel for fully known channels (Phi = 0)."""
    k, m, cols = channels.H.shape
    d = m * cols
    return CsitModel(mode="perfect", H_hat=channels.H.copy(),
                     Phi=np.zeros((k, d, d)), Sigma=None, L_train=0)


def estimate_sigma(cfg, k, rng, n_samples=None, sampler=None):
    """Monte-Carlo second moment Sigma_k = E[h_tilde_k h_tilde_k^H].

    sampler(rng) -> ChannelSet overrides the default channel draw (used by
    ablations and tests); the estimate is the zero-mean sample covariance.
    """
    if n_samples is None:
        n_samples = cfg.sigma_draws
    if n_samples < 100:
        raise ValidationError("need at least 100 samples for Sigma_k")
    if sampler is None:
        sampler = lambda r: sample_channels(cfg, r)
    d = cfg.M * (cfg.N + 1)
    acc = np.zeros((d, d), dtype=complex)
    for _ in range(n_samples):
        h_tilde = stack_rows(sampler(rng).H[k])
        acc += np.outer(h_tilde, h_tilde.conj())
    sigma = acc / n_samples
    return 0.5 * (sigma + sigma.conj().T)


def error_covariance(sigma_k, noise_power, l_train, p_max):
    """Phi_k = Sigma - Sigma (Sigma + sigma^2/(L P_max) I)^{-1} Sigma."""
    d = sigma_k.shape[0]
    eps = noise_power / (l_train * p_max)
    phi = sigma_k - sigma_k @ np.linalg.solve(sigma_k + eps * np.eye(d), sigma_k)
    return 0.5 * (phi + phi.conj().T)


def _draw_cn(rng, cov):
    """One CN(0, cov) sample via the eigenvalue square root."""
    w, u = np.linalg.eigh(cov)
    root = u * np.sqrt(np.maximum(w, 0.0))
    z = (rng.standard_normal(cov.shape[0]) + 1j * rng.standard_normal(cov.shape[0])) / np.sqrt(2.0)
    return root @ z


def build_csit(cfg, channels, sigma, rng):
    """Realize a CsitModel for cfg.csit_mode.

    Estimated mode draws e_k ~ CN(0, Phi_k) and sets H_hat = H - unstack(e_k),
    so the estimation error is exactly Phi_k-distributed.
    """
    if cfg.csit_mode == "perfect":
        return perfect_csit(channels)
    if sigma is None:
        raise ValidationError("estimated CSIT needs per-device Sigma_k")
    k, m, _ = channels.H.shape
    h_hat = np.empty_like(channels.H)
    phi = np.empty((k,) + sigma[0].shape, dtype=complex)
    for dev in range(k):
        phi[dev] = error_covariance(sigma[dev], cfg.noise_power, cfg.L_train, cfg.P_max)
        err = _draw_cn(rng, phi[dev])
        h_hat[dev] = unstack_rows(stack_rows(channels.H[dev]) - err, m)
    return CsitModel(mode="estimated", H_hat=h_hat, Phi=phi,
                     Sigma=np.asarray(sigma), L_train=cfg.L_train)


# --- JSON fixtures (complex numbers as [re, im] pairs) ---

def _c2l(a):
    a = np.asarray(a)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _l2c(lst):
    a = np.asarray(lst, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def channels_to_json(channels):
    m, n, k = channels.dims
    doc = {"M": m, "N": n, "K": k,
           "H_rb": _c2l(channels.H_rb),
           "h_sr": _c2l(channels.h_sr),
           "h_d": _c2l(channels.h_d)}
    return json.dumps(doc)


def channels_from_json(text):
    doc = json.loads(text)
    ch = ChannelSet(H_rb=_l2c(doc["H_rb"]), h_sr=_l2c(doc["h_sr"]), h_d=_l2c(doc["h_d"]))
    m, n, k = ch.dims
    if (m, n, k) != (doc["M"], doc["N"], doc["K"]):
        raise ValidationError("channel JSON dimensions disagree with array shapes")
    return ch
