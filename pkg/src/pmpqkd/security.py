"""Decoy-state estimation, finite-size bounds and the secure key rate.

Class weights
-------------
A coincidence class [A, B] is fixed by which intensity each user put in the
two bins. With per-slot probabilities p_k, one user's combined class has
prior weight

    mu  (mu + o):  2 p_mu p_o        2mu:  p_mu^2
    nu  (nu + o):  2 p_nu p_o        2nu:  p_nu^2
    o   (o + o):   p_o^2

and the normalised gain Q_AB = n_[A,B] / (w_A w_B) expands as
sum_{m,n} P_A(m) P_B(n) Y_mn with Poissonian P_k at the combined intensity.
The common normalisation cancels in every count-level bound below. The
filtered (mu|nu) slots never enter these classes, so the filter only rescales
that common factor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

from .core import PMPError, ProtocolParams, binary_entropy, N_PHASES
from .sifting import TallyReport


class InsufficientStatistics(PMPError, ValueError):
    pass


def chernoff_bounds(observed: float, failure_prob: float) -> tuple[float, float]:
    """Bounds (lower, upper) on the expectation of a sum of independent
    Bernoulli variables, each side failing with probability ``failure_prob``.

    Inverts the multiplicative Chernoff tails
    P(X >= (1+d)E) <= exp(-d^2 E / (2+d)) and P(X <= (1-d)E) <= exp(-d^2 E / 2).
    """
    if observed < 0:
        raise ValueError("observed count must be >= 0")
    if not 0 < failure_prob < 1:
        raise ValueError("failure_prob must be in (0, 1)")
    beta = math.log(1 / failure_prob)
    lower = observed + beta / 2 - math.sqrt(2 * beta * observed + beta * beta / 4)
    upper = observed + beta + math.sqrt(2 * beta * observed + beta * beta)
    return max(lower, 0.0), upper


@dataclass(frozen=True)
class DecoyEstimates:
    s0_z_lower: float
    s11_z_lower: float
    s11_x_lower: float
    e11_x_upper: float
    phi11_z_upper: float

    def to_dict(self) -> dict:
        return asdict(self)


def _class_weights(p: ProtocolParams) -> dict[str, float]:
    return {
        "o": p.p_o**2,
        "nu": 2 * p.p_nu * p.p_o,
        "mu": 2 * p.p_mu * p.p_o,
        "2nu": p.p_nu**2,
        "2mu": p.p_mu**2,
    }


def sampling_deviation(n_sample: float, n_target: float, rate: float, eps: float) -> float:
    """Random-sampling correction between an error rate measured on
    ``n_sample`` items and the rate on ``n_target`` unseen items."""
    if n_sample <= 0 or n_target <= 0 or not 0 < rate < 1:
        return 0.0
    total = n_sample + n_target
    arg = total / (n_sample * n_target * rate * (1 - rate) * eps * eps)
    if arg <= 1:
        return 0.0
    return math.sqrt(total * rate * (1 - rate) / (n_sample * n_target * math.log(2)) * math.log2(arg))


def decoy_estimate(
    report: TallyReport,
    params: ProtocolParams,
    *,
    finite: bool = True,
    sampling_correction: bool = True,
) -> DecoyEstimates:
    """Two-decoy analytic bounds on vacuum and single-photon-pair counts.

    With ``finite`` every observed count is replaced by its Chernoff bound at
    ``params.eps_prime`` in the direction that loosens the estimate;
    ``sampling_correction`` adds the X-to-Z random-sampling term at
    ``params.eps_hat``.
    """
    mu, nu = params.mu, params.nu
    w = _class_weights(params)
    eps = params.eps_prime

    def lo(x):
        return chernoff_bounds(x, eps)[0] if finite else float(x)

    def hi(x):
        return chernoff_bounds(x, eps)[1] if finite else float(x)

    def gain(n, a, b, bound):
        return bound(n) / (w[a] * w[b])

    if report.n_mu_mu > 0 and report.n_2nu_2nu == 0:
        raise InsufficientStatistics("no phase-matched [2nu,2nu] coincidences to bound the phase error")

    q_oo_lo = gain(report.n_o_o, "o", "o", lo)
    q_oo_hi = gain(report.n_o_o, "o", "o", hi)

    # Y11 >= (mu^3 S_nu - nu^3 S_mu) / (mu^2 nu^2 (mu - nu)), where
    # S_k = Q_kk e^2k - (Q_ko + Q_ok) e^k + Q_oo keeps only m, n >= 1 terms.
    s_nu = (
        gain(report.n_nu_nu, "nu", "nu", lo) * math.exp(2 * nu)
        - (gain(report.n_nu_o, "nu", "o", hi) + gain(report.n_o_nu, "o", "nu", hi)) * math.exp(nu)
    )
    s_mu = (
        gain(report.n_mu_mu, "mu", "mu", hi) * math.exp(2 * mu)
        - (gain(report.n_mu_o, "mu", "o", lo) + gain(report.n_o_mu, "o", "mu", lo)) * math.exp(mu)
    )
    numerator = mu**3 * s_nu - nu**3 * s_mu + (mu**3 - nu**3) * q_oo_lo
    y11 = max(numerator / (mu**2 * nu**2 * (mu - nu)), 0.0)

    s11_z = w["mu"] ** 2 * mu * mu * math.exp(-2 * mu) * y11
    s11_z = min(s11_z, report.n_mu_mu)
    match_fraction = 2 / N_PHASES
    s11_x = match_fraction * w["2nu"] ** 2 * (2 * nu) ** 2 * math.exp(-4 * nu) * y11

    # Coincidences in which at least one side emitted vacuum: Z bits carry no
    # information; in X they err with probability 1/2.
    s0_z = w["mu"] ** 2 * (
        math.exp(-mu) * (gain(report.n_mu_o, "mu", "o", lo) + gain(report.n_o_mu, "o", "mu", lo))
        - math.exp(-2 * mu) * q_oo_hi
    )
    s0_z = max(s0_z, 0.0)
    vac_x = match_fraction * w["2nu"] ** 2 * (
        math.exp(-2 * nu)
        * (gain(report.n_2nu_o, "2nu", "o", lo) + gain(report.n_o_2nu, "o", "2nu", lo))
        - math.exp(-4 * nu) * q_oo_hi
    )
    vac_x = max(vac_x, 0.0)

    if s11_x > 0:
        e11 = (hi(report.m_2nu_2nu) - vac_x / 2) / s11_x
        e11 = min(max(e11, 0.0), 0.5)
    else:
        e11 = 0.5
    phi = e11
    if sampling_correction and finite and s11_x > 0 and e11 < 0.5:
        phi = e11 + sampling_deviation(s11_x, s11_z, e11, params.eps_hat)
    phi = min(phi, 0.5)
    return DecoyEstimates(s0_z, s11_z, s11_x, e11, phi)


def lambda_ec(n_z: float, e_z: float, f_ec: float) -> float:
    """Bits leaked by error correction at efficiency ``f_ec``."""
    if n_z < 0:
        raise ValueError("n_z must be >= 0")
    return f_ec * n_z * binary_entropy(e_z)


def secrecy_terms(params: ProtocolParams) -> tuple[float, float, float]:
    return (
        math.log2(2 / params.eps_cor),
        2 * math.log2(2 / (params.eps_prime * params.eps_hat)),
        2 * math.log2(1 / (2 * params.eps_PA)),
    )


def skc0(total_loss_db: float) -> float:
    """Repeaterless secret-key capacity -log2(1 - eta) in bit per channel use."""
    if total_loss_db < 0:
        raise ValueError("loss must be >= 0")
    eta = 10 ** (-total_loss_db / 10)
    if eta >= 1:
        warnings.warn("lossless channel: repeaterless capacity is unbounded", RuntimeWarning)
        return math.inf
    return -math.log1p(-eta) / math.log(2)


@dataclass(frozen=True)
class KeyRateResult:
    skr_per_second: float
    skr_per_clock: float
    lambda_EC: float
    secrecy_terms: tuple[float, float, float]
    raw_bits: float  # the braced expression before clamping
    clamped: bool
    skc0_per_clock: Optional[float] = None
    ratio_over_skc0: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["secrecy_terms"] = list(self.secrecy_terms)
        return d


def secure_key_rate(
    est: DecoyEstimates,
    report: TallyReport,
    params: ProtocolParams,
    *,
    total_loss_db: Optional[float] = None,
    finite: bool = True,
) -> KeyRateResult:
    """Finite-size key rate; negative values clamp to zero with a warning."""
    e_z = report.E_z or 0.0
    leak = lambda_ec(report.n_mu_mu, e_z, params.f_EC)
    terms = secrecy_terms(params) if finite else (0.0, 0.0, 0.0)
    bits = est.s0_z_lower + est.s11_z_lower * (1 - binary_entropy(est.phi11_z_upper)) - leak - sum(terms)
    clamped = bits < 0
    if clamped:
        warnings.warn(f"negative key length {bits:.4g} clamped to 0", RuntimeWarning)
    per_clock = max(bits, 0.0) / params.N
    capacity = ratio = None
    if total_loss_db is not None:
        capacity = skc0(total_loss_db)
        ratio = per_clock / capacity if capacity and math.isfinite(capacity) else None
    return KeyRateResult(
        skr_per_second=per_clock * params.F,
        skr_per_clock=per_clock,
        lambda_EC=leak,
        secrecy_terms=terms,
        raw_bits=bits,
        clamped=clamped,
        skc0_per_clock=capacity,
        ratio_over_skc0=ratio,
    )
