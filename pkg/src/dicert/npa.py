"""Moment-matrix structure for the semidefinite relaxation hierarchy.

Operator words are pairs (a_word, b_word); each party word is a tuple of
(input, outcome) projector letters with outcome < o-1 (the last projector of
every input is eliminated via completeness).  Reduction rules: projector
idempotence, orthogonality of same-input projectors, and commutation between
the parties.  Moments are real-symmetrized: a word and its reverse label the
same moment.

Levels: "1" (identity + single projectors), "1+AB" (adds all A*B products),
"2" (adds AA' and BB' products as well).

Zero-face reduction: entries of the observed behaviour that vanish force
rows/columns of every branch moment matrix to vanish; dropping them keeps
every true quantum decomposition feasible (so the bound remains valid) while
removing the degenerate faces that stall interior-point solvers.  A word may
only be dropped when a dead projector letter sits at the state-facing end,
which is what ``word_is_dead`` checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .behaviour import Scenario

LEVELS = ("1", "1+AB", "2")

# observed probabilities below this are treated as exact zeros when building
# the reduced moment structure
ZERO_TOLERANCE = 1e-12


def reduce_party_word(word):
    """Apply idempotence/orthogonality; None means the word is zero."""
    out = []
    for x, a in word:
        if out and out[-1][0] == x:
            if out[-1][1] == a:
                continue
            return None
        out.append((x, a))
    return tuple(out)


def monomial_words(scenario, level):
    """Canonically ordered monomial basis for the given hierarchy level."""
    if level not in LEVELS:
        raise ValueError(f"unsupported level {level!r}; choose from {LEVELS}")
    s = scenario
    a1 = [((x, a),) for x in range(s.m_a) for a in range(s.o_a - 1)]
    b1 = [((y, b),) for y in range(s.m_b) for b in range(s.o_b - 1)]
    words = [((), ())]
    words += [(w, ()) for w in a1]
    words += [((), w) for w in b1]
    if level in ("1+AB", "2"):
        words += [(wa, wb) for wa in a1 for wb in b1]
    if level == "2":
        a2 = sorted({w for w in (reduce_party_word(u + v) for u in a1 for v in a1)
                     if w is not None and len(w) == 2})
        b2 = sorted({w for w in (reduce_party_word(u + v) for u in b1 for v in b1)
                     if w is not None and len(w) == 2})
        words += [(w, ()) for w in a2]
        words += [((), w) for w in b2]
    return words


def moment_key(wi, wj):
    """Canonical moment label of <wi_dagger * wj>; None if the product is zero."""
    aw = reduce_party_word(tuple(reversed(wi[0])) + wj[0])
    if aw is None:
        return None
    bw = reduce_party_word(tuple(reversed(wi[1])) + wj[1])
    if bw is None:
        return None
    w = (aw, bw)
    wr = (tuple(reversed(aw)), tuple(reversed(bw)))
    return min(w, wr)


@dataclass(frozen=True)
class DeadSet:
    """Projector letters and letter pairs annihilated by the observed zeros."""

    a_letters: frozenset
    b_letters: frozenset
    ab_pairs: frozenset

    @classmethod
    def empty(cls):
        return cls(frozenset(), frozenset(), frozenset())

    @classmethod
    def from_behaviour(cls, p, tol=ZERO_TOLERANCE):
        s = p.scenario
        dead_a = {(x, a) for x in range(s.m_a) for a in range(s.o_a - 1)
                  if p.entries[a, :, x, 0].sum() < tol}
        dead_b = {(y, b) for y in range(s.m_b) for b in range(s.o_b - 1)
                  if p.entries[:, b, 0, y].sum() < tol}
        dead_ab = {((x, a), (y, b))
                   for x in range(s.m_a) for a in range(s.o_a - 1)
                   for y in range(s.m_b) for b in range(s.o_b - 1)
                   if p.entries[a, b, x, y] < tol}
        return cls(frozenset(dead_a), frozenset(dead_b), frozenset(dead_ab))


def word_is_dead(w, dead):
    """True when the word annihilates every state with the observed zeros.

    Only the state-facing (last) letter of each party word can be used:
    w|psi> = 0 follows when that letter, or the cross pair of last letters,
    is dead.
    """
    aw, bw = w
    if aw and aw[-1] in dead.a_letters:
        return True
    if bw and bw[-1] in dead.b_letters:
        return True
    if aw and bw and (aw[-1], bw[-1]) in dead.ab_pairs:
        return True
    return False


def moment_is_dead(k, dead):
    """A moment <w> vanishes when w or its reverse annihilates the state."""
    kr = (tuple(reversed(k[0])), tuple(reversed(k[1])))
    return word_is_dead(k, dead) or word_is_dead(kr, dead)


@dataclass
class NPARelaxation:
    """Monomial basis and moment-matrix index structure at one level.

    ``structure`` is the sparse (d*d, n_moments) matrix scattering the moment
    vector into the (symmetric) moment matrix.  ``moment_index`` maps each
    canonical moment word to its position in the moment vector.
    """

    scenario: Scenario
    level: str
    monomials: list
    moment_index: dict = field(repr=False)
    structure: sp.csr_matrix = field(repr=False)
    dead: DeadSet = field(repr=False)

    @property
    def size(self):
        return len(self.monomials)

    @property
    def n_moments(self):
        return len(self.moment_index)


def build_monomials(scenario, level, dead=None):
    """Construct the (possibly zero-face-reduced) relaxation structure."""
    dead = dead or DeadSet.empty()
    words = [w for w in monomial_words(scenario, level)
             if not word_is_dead(w, dead)]
    d = len(words)
    index = {}
    rows, cols, vals = [], [], []
    for i in range(d):
        for j in range(i, d):
            k = moment_key(words[i], words[j])
            if k is None or moment_is_dead(k, dead):
                continue
            m = index.setdefault(k, len(index))
            rows.append(i * d + j)
            cols.append(m)
            vals.append(1.0)
            if i != j:
                rows.append(j * d + i)
                cols.append(m)
                vals.append(1.0)
    structure = sp.csr_matrix((vals, (rows, cols)), shape=(d * d, len(index)))
    return NPARelaxation(scenario, level, words, index, structure, dead)


def moment_coefficients(relax, terms):
    """Vector v with v . moments = sum of coef * <word> over (word, coef) terms.

    Terms whose moment was pinned to zero by the reduction contribute
    nothing; terms must use canonical moment keys.
    """
    v = np.zeros(relax.n_moments)
    for word, coef in terms:
        idx = relax.moment_index.get(word)
        if idx is not None:
            v[idx] += coef
    return v


def canonical(aw, bw):
    w = (tuple(aw), tuple(bw))
    wr = (tuple(reversed(w[0])), tuple(reversed(w[1])))
    return min(w, wr)


def probability_terms(scenario, a, b, x, y):
    """p(ab|xy) as (moment word, coefficient) terms, via Collins-Gisin completion."""
    s = scenario
    terms = []

    def joint(a_, b_):
        return (canonical([(x, a_)], [(y, b_)]), 1.0)

    if a < s.o_a - 1 and b < s.o_b - 1:
        return [joint(a, b)]
    if a < s.o_a - 1:  # b is the eliminated outcome
        terms.append((canonical([(x, a)], []), 1.0))
        terms += [(canonical([(x, a)], [(y, b_)]), -1.0) for b_ in range(s.o_b - 1)]
        return terms
    if b < s.o_b - 1:
        terms.append((canonical([], [(y, b)]), 1.0))
        terms += [(canonical([(x, a_)], [(y, b)]), -1.0) for a_ in range(s.o_a - 1)]
        return terms
    terms.append((canonical([], []), 1.0))
    terms += [(canonical([(x, a_)], []), -1.0) for a_ in range(s.o_a - 1)]
    terms += [(canonical([], [(y, b_)]), -1.0) for b_ in range(s.o_b - 1)]
    terms += [(canonical([(x, a_)], [(y, b_)]), 1.0)
              for a_ in range(s.o_a - 1) for b_ in range(s.o_b - 1)]
    return terms


def marginal_terms(scenario, a, x):
    """Alice marginal p(a|x) as moment terms."""
    if a < scenario.o_a - 1:
        return [(canonical([(x, a)], []), 1.0)]
    terms = [(canonical([], []), 1.0)]
    terms += [(canonical([(x, a_)], []), -1.0) for a_ in range(scenario.o_a - 1)]
    return terms


def collins_gisin_rows(relax):
    """Matrix L mapping a branch moment vector to its Collins-Gisin table.

    Rows are ordered like CollinsGisinTable.coefficients.ravel().
    """
    s = relax.scenario
    na, nb = s.cg_shape
    rows = []
    for i in range(na):
        for j in range(nb):
            if i == 0 and j == 0:
                terms = [(canonical([], []), 1.0)]
            elif j == 0:
                x, a = divmod(i - 1, s.o_a - 1)
                terms = [(canonical([(x, a)], []), 1.0)]
            elif i == 0:
                y, b = divmod(j - 1, s.o_b - 1)
                terms = [(canonical([], [(y, b)]), 1.0)]
            else:
                x, a = divmod(i - 1, s.o_a - 1)
                y, b = divmod(j - 1, s.o_b - 1)
                terms = [(canonical([(x, a)], [(y, b)]), 1.0)]
            rows.append(moment_coefficients(relax, terms))
    return np.array(rows)


def functional_coefficients(relax, functional):
    """A Bell functional as a vector over branch moments."""
    s = relax.scenario
    v = np.zeros(relax.n_moments)
    if functional.cg is not None:
        v = functional.cg.ravel() @ collins_gisin_rows(relax)
    else:
        for x in range(s.m_a):
            for y in range(s.m_b):
                for a in range(s.o_a):
                    for b in range(s.o_b):
                        coef = functional.full[a, b, x, y]
                        if coef:
                            v += coef * moment_coefficients(
                                relax, probability_terms(s, a, b, x, y))
    return v
