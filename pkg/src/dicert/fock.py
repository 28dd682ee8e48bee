"""Truncated Fock-space oracle for the SPDC click statistics.

Independent of the Gaussian path in dicert.spdc: the state is expanded in
the photon-number basis, the polarization rotations act through matrix
exponentials of truncated ladder operators, loss acts as per-photon binomial
damping, and bucket detectors read the joint photon-number distribution
directly.  Meant for cross-validation at small N and small squeezing.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm, logm

from .spdc import (SetupParams, Efficiency, measurement_unitary,
                   pattern_to_outcomes, N_PATTERNS)

ORACLE_N_LIMIT = 3
TAIL_TOLERANCE = 1e-10


def truncation_tail(g1, g2, nmax):
    """Upper bound on the probability mass beyond nmax photons per mode."""
    tail = 0.0
    for lam in (abs(np.tanh(g1)), abs(np.tanh(g2))):
        if lam > 0:
            # geometric photon-pair distribution of a two-mode squeezed vacuum
            tail += lam ** (2 * (nmax + 1))
    return tail


def _two_mode_fock_unitary(u, nmax):
    """Fock-space operator of the passive two-mode transform c' = U c."""
    d = nmax + 1
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    a1 = np.kron(a, np.eye(d))
    a2 = np.kron(np.eye(d), a)
    m = logm(u)
    h = (m[0, 0] * a1.conj().T @ a1 + m[0, 1] * a1.conj().T @ a2
         + m[1, 0] * a2.conj().T @ a1 + m[1, 1] * a2.conj().T @ a2)
    return expm(h)


def _single_pair_pattern_probs(params, efficiency, x, y, nmax):
    """16 click-pattern probabilities of one mode-pair quadruple."""
    d = nmax + 1
    l1, l2 = np.tanh(params.g1), np.tanh(params.g2)
    # modes ordered (a, a_perp, b, b_perp); the squeezers populate |n,n> on
    # (a, b_perp) with weight l1^n and |m,m> on (a_perp, b) with (-l2)^m
    psi = np.zeros((d, d, d, d), dtype=complex)
    for n in range(d):
        for m in range(d):
            psi[n, m, m, n] = l1 ** n * (-l2) ** m
    psi /= np.linalg.norm(psi)

    ua = _two_mode_fock_unitary(measurement_unitary(*params.angles_a[x]), nmax)
    ub = _two_mode_fock_unitary(measurement_unitary(*params.angles_b[y]), nmax)
    psi = (ua @ psi.reshape(d * d, d * d) @ ub.T).reshape(d, d, d, d)

    number_dist = np.abs(psi) ** 2
    # each photon survives the loss independently: a mode holding n photons
    # stays silent with probability (1-eta)^n
    silent = (1 - efficiency.eta) ** np.arange(d)
    probs = np.zeros(N_PATTERNS)
    for pattern in range(N_PATTERNS):
        w = np.ones((1, 1, 1, 1))
        for i in range(4):
            factor = (1 - silent) if (pattern >> (3 - i)) & 1 else silent
            shape = [1, 1, 1, 1]
            shape[i] = d
            w = w * factor.reshape(shape)
        probs[pattern] = float(np.sum(number_dist * w))
    return probs


def fock_pattern_probs(params, efficiency, x, y, nmax=8):
    """Click-pattern probabilities for setting pair (x, y), all N pairs.

    Pairs are physically independent; the detectors OR their clicks, so the
    N-pair pattern distribution is the OR-convolution of single-pair ones.
    """
    if params.n_pairs > ORACLE_N_LIMIT:
        raise ValueError(f"oracle supports N <= {ORACLE_N_LIMIT}")
    tail = truncation_tail(params.g1, params.g2, nmax)
    if tail > TAIL_TOLERANCE:
        raise ValueError(
            f"truncation nmax={nmax} leaves tail mass {tail:.2e} > {TAIL_TOLERANCE}")
    single = _single_pair_pattern_probs(params, efficiency, x, y, nmax)
    probs = single.copy()
    for _ in range(params.n_pairs - 1):
        merged = np.zeros(N_PATTERNS)
        for z1 in range(N_PATTERNS):
            for z2 in range(N_PATTERNS):
                merged[z1 | z2] += probs[z1] * single[z2]
        probs = merged
    return probs


def fock_oracle_distribution(params, efficiency, x, y, nmax=8):
    """4x4 outcome block (a, b) for one setting pair, by Fock expansion."""
    return pattern_to_outcomes(fock_pattern_probs(params, efficiency, x, y, nmax))
