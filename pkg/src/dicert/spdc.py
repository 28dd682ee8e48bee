"""Click statistics of the N-mode-pair SPDC polarization setup.

The source emits N independent mode pairs; on each pair, two two-mode
squeezers act: (a, b_perp) with parameter g1 and (a_perp, b) with parameter
-g2 (the relative sign is the relative phase of the two squeezers).  Each
party rotates its polarization pair, suffers a loss channel of transmittance
eta on every mode, and watches two bucket detectors (click / no-click), so
each party has 4 outcomes per setting.

Everything is computed in the Gaussian (covariance matrix) formalism and can
be cross-checked against the independent Fock-space oracle in dicert.fock.

Conventions, fixed once:
  * covariance of the vacuum is identity/2; quadratures ordered xxpp
    (all positions, then all momenta);
  * a measurement setting (theta, phi) mixes the two polarization modes as
    c = cos(theta) a + sin(theta) e^{-i phi} a_perp; theta is the mode-mixing
    angle itself (the projection direction on the Bloch sphere has polar
    angle 2*theta).  This convention is selected by the published optimal
    parameter vector: it reproduces the reference certification values,
    while the half-angle alternative does not.
  * loss is applied after the rotation (equivalent to before, as the loss
    is polarization symmetric).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .behaviour import Behaviour, Scenario

VACUUM_VARIANCE = 0.5

G_MAX = 0.5
N_MAX = 100

# Detector order used everywhere: (A1, A2, B1, B2); a click pattern is the
# 4-bit integer with A1 as the most significant bit.  The local outcome is
# (first detector bit, second detector bit) read as an integer, so the
# one-detector binning is literally a slice on the first bit.
N_DETECTORS = 4
N_PATTERNS = 16

_SUBSETS = [s for k in range(1, 5) for s in itertools.combinations(range(4), k)]


@dataclass(frozen=True)
class SetupParams:
    """Tunable source and measurement parameters.

    angles_a / angles_b are per-setting (theta, phi) tuples in radians.
    """

    n_pairs: int
    g1: float
    g2: float
    angles_a: tuple
    angles_b: tuple

    def __post_init__(self):
        if not 1 <= self.n_pairs <= N_MAX:
            raise ValueError(f"mode-pair count must be in [1, {N_MAX}]")
        if abs(self.g1) > G_MAX or abs(self.g2) > G_MAX:
            raise ValueError(f"|g1|, |g2| must be <= {G_MAX}")
        for angles in (self.angles_a, self.angles_b):
            for th, ph in angles:
                if not (np.isfinite(th) and np.isfinite(ph)):
                    raise ValueError("angles must be finite")

    @property
    def m_a(self):
        return len(self.angles_a)

    @property
    def m_b(self):
        return len(self.angles_b)

    @property
    def entanglement_ratio(self):
        """t = tanh(g1)/tanh(g2), the reported degree of source entanglement."""
        denom = np.tanh(self.g2)
        return float(np.tanh(self.g1) / denom) if denom != 0 else np.inf

    def to_json(self):
        return json.dumps({
            "N": self.n_pairs, "g1": self.g1, "g2": self.g2,
            "anglesA": [list(a) for a in self.angles_a],
            "anglesB": [list(b) for b in self.angles_b],
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(doc["N"], doc["g1"], doc["g2"],
                   tuple(tuple(a) for a in doc["anglesA"]),
                   tuple(tuple(b) for b in doc["anglesB"]))

    @classmethod
    def from_vector(cls, vec, m_a=None):
        """Parameter vector (N, g1, g2, thA1, phA1, ..., thBm, phBm).

        Without m_a the angle tail is split evenly between the parties.
        """
        n, g1, g2 = int(round(vec[0])), float(vec[1]), float(vec[2])
        tail = np.asarray(vec[3:], dtype=float)
        if len(tail) % 2:
            raise ValueError("angles must come in (theta, phi) pairs")
        pairs = [tuple(tail[i:i + 2]) for i in range(0, len(tail), 2)]
        if m_a is None:
            if len(pairs) % 2:
                raise ValueError("cannot split an odd number of settings evenly")
            m_a = len(pairs) // 2
        return cls(n, g1, g2, tuple(pairs[:m_a]), tuple(pairs[m_a:]))

    def to_vector(self):
        tail = [v for th_ph in self.angles_a + self.angles_b for v in th_ph]
        return np.array([self.n_pairs, self.g1, self.g2] + tail)


@dataclass(frozen=True)
class Efficiency:
    """Overall transmittance from source to detector."""

    eta: float

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.eta}")


def as_efficiency(value):
    """Coerce a float or Efficiency into an Efficiency."""
    if isinstance(value, Efficiency):
        return value
    return Efficiency(float(value))


class GaussianState:
    """Zero-mean Gaussian state over M modes; covariance in xxpp ordering."""

    def __init__(self, covariance):
        covariance = np.asarray(covariance, dtype=float)
        if covariance.ndim != 2 or covariance.shape[0] != covariance.shape[1] \
                or covariance.shape[0] % 2:
            raise ValueError("covariance must be square and even-dimensional")
        if np.abs(covariance - covariance.T).max() > 1e-10:
            raise ValueError("covariance must be symmetric")
        self.covariance = 0.5 * (covariance + covariance.T)
        self.covariance.setflags(write=False)

    @property
    def n_modes(self):
        return self.covariance.shape[0] // 2

    def symplectic_eigenvalues(self):
        m = self.n_modes
        omega = np.block([[np.zeros((m, m)), np.eye(m)],
                          [-np.eye(m), np.zeros((m, m))]])
        ev = np.linalg.eigvals(1j * omega @ self.covariance)
        return np.sort(np.abs(ev.real))[m:]  # eigenvalues come in +/- pairs

    def is_physical(self, tol=1e-9):
        return bool(self.symplectic_eigenvalues().min() >= VACUUM_VARIANCE - tol)

    def reduced(self, modes):
        idx = list(modes) + [m + self.n_modes for m in modes]
        return GaussianState(self.covariance[np.ix_(idx, idx)])

    def vacuum_probability(self):
        """Overlap with the multimode vacuum, 1/sqrt(det(sigma + I/2))."""
        m = 2 * self.n_modes
        det = np.linalg.det(self.covariance + VACUUM_VARIANCE * np.eye(m))
        return float(1.0 / np.sqrt(det))


def vacuum_state(n_modes):
    return GaussianState(VACUUM_VARIANCE * np.eye(2 * n_modes))


def two_mode_squeezed_cov(r):
    """Covariance (xxpp) of the two-mode squeezed vacuum exp[r(a+b+ - ab)]|0>."""
    c, s = np.cosh(2 * r), np.sinh(2 * r)
    x = VACUUM_VARIANCE * np.array([[c, s], [s, c]])
    p = VACUUM_VARIANCE * np.array([[c, -s], [-s, c]])
    z = np.zeros((2, 2))
    return np.block([[x, z], [z, p]])


def single_pair_covariance(g1, g2):
    """State of one mode pair quadruple, ordered (a, a_perp, b, b_perp).

    Two independent two-mode squeezed vacua: (a, b_perp) with parameter g1
    and (a_perp, b) with parameter -g2.
    """
    if abs(g1) > G_MAX or abs(g2) > G_MAX:
        raise ValueError(f"|g1|, |g2| must be <= {G_MAX}")
    cov = VACUUM_VARIANCE * np.eye(8)
    for i, j, r in ((0, 3, g1), (1, 2, -g2)):
        c2 = two_mode_squeezed_cov(r)
        idx = [i, j, i + 4, j + 4]
        cov[np.ix_(idx, idx)] = c2
    return GaussianState(cov)


def measurement_unitary(theta, phi):
    """Mode transform of one party's polarization pair for setting (theta, phi)."""
    ct, st = np.cos(theta), np.sin(theta)
    return np.array([[ct, st * np.exp(-1j * phi)],
                     [-st * np.exp(1j * phi), ct]])


def passive_symplectic(u):
    """xxpp symplectic matrix of the passive mode transform c' = U c."""
    return np.block([[u.real, -u.imag], [u.imag, u.real]])


def apply_measurement_optics(state, setting_a, setting_b, efficiency):
    """Rotate both polarization pairs and apply the loss channels.

    The same wave plates act on every mode pair, so this single-pair
    transformation is all that is needed for any N.
    """
    if state.n_modes != 4:
        raise ValueError("expected the 4-mode single-pair state")
    u = np.zeros((4, 4), dtype=complex)
    u[:2, :2] = measurement_unitary(*setting_a)
    u[2:, 2:] = measurement_unitary(*setting_b)
    s = passive_symplectic(u)
    cov = s @ state.covariance @ s.T
    eta = as_efficiency(efficiency).eta
    cov = eta * cov + (1 - eta) * VACUUM_VARIANCE * np.eye(8)
    return GaussianState(cov)


def noclick_probabilities(state, n_pairs):
    """P(no detector in S clicks) for every nonempty detector subset S.

    Detector i watches mode i of every pair; pairs are i.i.d., so the
    probability is the single-pair vacuum projection to the N-th power.
    """
    if not state.is_physical():
        raise ValueError("covariance is not a physical Gaussian state")
    return {s: state.reduced(s).vacuum_probability() ** n_pairs
            for s in _SUBSETS}


def click_distribution(noclick):
    """Solve the 16-equation linear system mapping subset no-click
    probabilities to click-pattern probabilities.

    Fifteen equations state that summing patterns whose detectors in S are
    all silent gives P_noclick(S); the sixteenth is normalisation.
    """
    a = np.zeros((16, 16))
    b = np.zeros(16)
    row = 0
    for s in _SUBSETS:
        mask = sum(1 << (3 - i) for i in s)
        for pattern in range(16):
            if pattern & mask == 0:
                a[row, pattern] = 1.0
        b[row] = noclick[s]
        row += 1
    a[row, :] = 1.0
    b[row] = 1.0
    probs = np.linalg.solve(a, b)
    if probs.min() < -1e-10:
        raise ValueError(
            f"click pattern probability {probs.min():.3e} below tolerance; "
            "inconsistent no-click inputs")
    return np.where(np.abs(probs) < 1e-12, 0.0, np.maximum(probs, 0.0))


def pattern_to_outcomes(pattern_probs):
    """Fold 16 click patterns into the 4x4 outcome block (a, b)."""
    blk = np.zeros((4, 4))
    for pattern in range(16):
        a1, a2 = (pattern >> 3) & 1, (pattern >> 2) & 1
        b1, b2 = (pattern >> 1) & 1, pattern & 1
        blk[2 * a1 + a2, 2 * b1 + b2] += pattern_probs[pattern]
    return blk


def setting_distribution(params, efficiency, x, y):
    """16 click-pattern probabilities for one setting pair (x, y)."""
    state = single_pair_covariance(params.g1, params.g2)
    state = apply_measurement_optics(state, params.angles_a[x],
                                     params.angles_b[y], efficiency)
    return click_distribution(noclick_probabilities(state, params.n_pairs))


def assemble_behaviour(params, efficiency):
    """Full behaviour over the (m_a, m_b, 4, 4) scenario."""
    s = Scenario(params.m_a, params.m_b, 4, 4)
    entries = np.zeros((4, 4, s.m_a, s.m_b))
    for x in range(s.m_a):
        for y in range(s.m_b):
            entries[:, :, x, y] = pattern_to_outcomes(
                setting_distribution(params, efficiency, x, y))
    return Behaviour(s, entries)
