"""Bell scenarios, behaviours and linear functionals on them.

A behaviour is the full table of conditional probabilities p(ab|xy) observed
in a bipartite Bell test.  This module owns the representation, its validity
checks (positivity, normalisation, no-signalling), deterministic outcome
coarsening (binning), the Collins-Gisin coordinate system, and evaluation of
linear Bell functionals.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

# Validation tolerances: above solver noise, below any physical effect.
POSITIVITY_TOL = 1e-9
NORMALISATION_TOL = 1e-9
NO_SIGNALLING_TOL = 1e-8


@dataclass(frozen=True)
class Scenario:
    """Bipartite measurement scenario: inputs and outputs per party."""

    m_a: int
    m_b: int
    o_a: int
    o_b: int

    def __post_init__(self):
        if self.m_a < 1 or self.m_b < 1:
            raise ValueError("each party needs at least one input")
        if self.o_a < 2 or self.o_b < 2:
            raise ValueError("each party needs at least two outputs")

    @property
    def n_entries(self):
        return self.m_a * self.m_b * self.o_a * self.o_b

    @property
    def cg_shape(self):
        """Shape of the Collins-Gisin table for this scenario."""
        return (1 + self.m_a * (self.o_a - 1), 1 + self.m_b * (self.o_b - 1))


class Behaviour:
    """Probability table p(ab|xy), stored as an array indexed [a, b, x, y].

    Immutable: the entries array is copied on construction and write-locked.
    Set ``unnormalized=True`` for decomposition pieces that are only required
    to sum to a behaviour (their per-setting totals are the branch weights).
    """

    def __init__(self, scenario, entries, unnormalized=False):
        entries = np.asarray(entries, dtype=float)
        expected = (scenario.o_a, scenario.o_b, scenario.m_a, scenario.m_b)
        if entries.shape != expected:
            raise ValueError(
                f"entries shape {entries.shape} does not match scenario {expected}")
        self.scenario = scenario
        self.entries = entries.copy()
        self.entries.setflags(write=False)
        self.unnormalized = unnormalized

    def p(self, a, b, x, y):
        return float(self.entries[a, b, x, y])

    def marginal_a(self, a, x, y=0):
        return float(self.entries[a, :, x, y].sum())

    def marginal_b(self, b, y, x=0):
        return float(self.entries[:, b, x, y].sum())

    def __eq__(self, other):
        return (isinstance(other, Behaviour)
                and self.scenario == other.scenario
                and np.array_equal(self.entries, other.entries))

    def __repr__(self):
        s = self.scenario
        return f"Behaviour(({s.m_a},{s.m_b},{s.o_a},{s.o_b}))"


@dataclass(frozen=True)
class BinningMap:
    """Deterministic local outcome coarsening for both parties.

    party_a / party_b map each original outcome index to a coarsened one;
    o_a_out / o_b_out give the coarsened outcome counts.
    """

    party_a: tuple
    party_b: tuple
    o_a_out: int
    o_b_out: int

    def __post_init__(self):
        for m, o in ((self.party_a, self.o_a_out), (self.party_b, self.o_b_out)):
            if any(not (0 <= v < o) for v in m):
                raise ValueError("binning map image outside coarsened range")
        if self.o_a_out > len(self.party_a) or self.o_b_out > len(self.party_b):
            raise ValueError("binning cannot increase the number of outcomes")


# The three ways to bin a trit to a bit, up to relabelings (representatives
# as printed), plus the one-detector slice on the 4-outcome optical encoding
# (outcome = 2*click1 + click2, so dropping detector 2 keeps the first bit).
BIN_B = (0, 1, 0)
BIN_B_PRIME = (0, 1, 1)
BIN_B_DOUBLE_PRIME = (0, 0, 1)
BIN_ONE_DETECTOR = (0, 0, 1, 1)


def binning(map_a, map_b):
    """BinningMap from per-party outcome tuples."""
    return BinningMap(tuple(map_a), tuple(map_b),
                      max(map_a) + 1, max(map_b) + 1)


@dataclass(frozen=True)
class CollinsGisinTable:
    """Minimal linear coordinates of a no-signalling behaviour.

    Row 0 / column 0 hold 1 and the single-party marginals p(a|x), p(b|y)
    for all but the last outcome; the body holds the joint probabilities.
    """

    scenario: Scenario
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.coefficients.shape != self.scenario.cg_shape:
            raise ValueError("Collins-Gisin table shape mismatch")


@dataclass(frozen=True)
class BellFunctional:
    """Linear functional on behaviours.

    Exactly one of ``cg`` (Collins-Gisin table of coefficients) or ``full``
    (coefficients indexed like behaviour entries [a,b,x,y]) is set.
    """

    scenario: Scenario
    cg: np.ndarray | None = None
    full: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        if (self.cg is None) == (self.full is None):
            raise ValueError("specify exactly one of cg= or full= coefficients")
        if self.cg is not None and self.cg.shape != self.scenario.cg_shape:
            raise ValueError("cg coefficient shape mismatch")
        if self.full is not None:
            s = self.scenario
            if self.full.shape != (s.o_a, s.o_b, s.m_a, s.m_b):
                raise ValueError("full coefficient shape mismatch")


def validate_behaviour(p):
    """Check positivity, normalisation and no-signalling.

    Returns a list of (invariant, detail, magnitude) tuples, empty iff the
    behaviour is valid at the module tolerances.  Never mutates the input.
    """
    s = p.scenario
    violations = []
    lo, hi = p.entries.min(), p.entries.max()
    if lo < -POSITIVITY_TOL:
        violations.append(("positivity", f"min entry {lo:.3e}", float(-lo)))
    if hi > 1 + POSITIVITY_TOL:
        violations.append(("positivity", f"max entry {hi:.6f}", float(hi - 1)))
    if not p.unnormalized:
        for x in range(s.m_a):
            for y in range(s.m_b):
                tot = p.entries[:, :, x, y].sum()
                if abs(tot - 1) > NORMALISATION_TOL:
                    violations.append(
                        ("normalisation", f"sum over (x={x},y={y}) = {tot:.12f}",
                         float(abs(tot - 1))))
    # Alice marginals must not depend on y, Bob's not on x.
    ma = p.entries.sum(axis=1)  # [a, x, y]
    dev = np.abs(ma - ma[:, :, :1]).max()
    if dev > NO_SIGNALLING_TOL:
        violations.append(("no-signalling", "Alice marginal depends on y", float(dev)))
    mb = p.entries.sum(axis=0)  # [b, x, y]
    dev = np.abs(mb - mb[:, :1, :]).max()
    if dev > NO_SIGNALLING_TOL:
        violations.append(("no-signalling", "Bob marginal depends on x", float(dev)))
    return violations


def max_violation(p):
    """Largest violation magnitude reported by validate_behaviour (0 if valid)."""
    v = validate_behaviour(p)
    return max((m for _, _, m in v), default=0.0)


def apply_binning(p, m):
    """Coarsen outcomes: p'(a'b'|xy) = sum over preimages of (a', b')."""
    s = p.scenario
    if len(m.party_a) != s.o_a or len(m.party_b) != s.o_b:
        raise ValueError("binning map domain does not match scenario outputs")
    out = np.zeros((m.o_a_out, m.o_b_out, s.m_a, s.m_b))
    for a in range(s.o_a):
        for b in range(s.o_b):
            out[m.party_a[a], m.party_b[b]] += p.entries[a, b]
    return Behaviour(Scenario(s.m_a, s.m_b, m.o_a_out, m.o_b_out), out,
                     unnormalized=p.unnormalized)


def compose_binnings(first, second):
    """Binning equivalent to applying ``first`` then ``second``."""
    return binning([second.party_a[v] for v in first.party_a],
                   [second.party_b[v] for v in first.party_b])


# Singlet click/no-click statistics: c and s are the quantum probabilities of
# equal/unequal outcomes for the CHSH-optimal settings, (2 +/- sqrt(2))/8.
CHSH_C = (2 + np.sqrt(2)) / 8
CHSH_S = (2 - np.sqrt(2)) / 8


def chsh_eta_behaviour(eta):
    """CHSH singlet statistics with detection efficiency eta.

    Two inputs and three outcomes per party; outcome 2 is the no-click event.
    Blocks (x,y) in {(0,0),(0,1),(1,0)} are identical; (1,1) swaps the
    equal/unequal click probabilities.
    """
    if not 0 <= eta <= 1:
        raise ValueError(f"efficiency must be in [0, 1], got {eta}")
    lost = eta * (1 - eta) / 2

    def block(c, s):
        return np.array([
            [eta * eta * c, eta * eta * s, lost],
            [eta * eta * s, eta * eta * c, lost],
            [lost, lost, (1 - eta) ** 2],
        ])

    entries = np.zeros((3, 3, 2, 2))
    for x, y in itertools.product(range(2), range(2)):
        if x == 1 and y == 1:
            entries[:, :, x, y] = block(CHSH_S, CHSH_C)
        else:
            entries[:, :, x, y] = block(CHSH_C, CHSH_S)
    return Behaviour(Scenario(2, 2, 3, 3), entries)


def to_collins_gisin(p):
    """Collins-Gisin table of a normalized no-signalling behaviour."""
    s = p.scenario
    na, nb = s.cg_shape
    t = np.zeros((na, nb))
    t[0, 0] = 1.0
    for x in range(s.m_a):
        for a in range(s.o_a - 1):
            t[1 + x * (s.o_a - 1) + a, 0] = p.entries[a, :, x, 0].sum()
    for y in range(s.m_b):
        for b in range(s.o_b - 1):
            t[0, 1 + y * (s.o_b - 1) + b] = p.entries[:, b, 0, y].sum()
    for x in range(s.m_a):
        for a in range(s.o_a - 1):
            for y in range(s.m_b):
                for b in range(s.o_b - 1):
                    t[1 + x * (s.o_a - 1) + a, 1 + y * (s.o_b - 1) + b] = \
                        p.entries[a, b, x, y]
    return CollinsGisinTable(s, t)


def from_collins_gisin(table):
    """Inverse of to_collins_gisin (well-defined on no-signalling tables)."""
    s = table.scenario
    t = table.coefficients
    oa, ob = s.o_a, s.o_b
    entries = np.zeros((oa, ob, s.m_a, s.m_b))
    for x in range(s.m_a):
        pa = [t[1 + x * (oa - 1) + a, 0] for a in range(oa - 1)]
        pa.append(t[0, 0] - sum(pa))
        for y in range(s.m_b):
            pb = [t[0, 1 + y * (ob - 1) + b] for b in range(ob - 1)]
            pb.append(t[0, 0] - sum(pb))
            joint = np.zeros((oa, ob))
            for a in range(oa - 1):
                for b in range(ob - 1):
                    joint[a, b] = t[1 + x * (oa - 1) + a, 1 + y * (ob - 1) + b]
            for a in range(oa - 1):
                joint[a, ob - 1] = pa[a] - joint[a, :ob - 1].sum()
            for b in range(ob - 1):
                joint[oa - 1, b] = pb[b] - joint[:oa - 1, b].sum()
            joint[oa - 1, ob - 1] = t[0, 0] - joint.sum()
            entries[:, :, x, y] = joint
    return Behaviour(s, entries)


def bell_value(p, functional):
    """Evaluate a linear Bell functional on a behaviour."""
    if functional.scenario != p.scenario:
        raise ValueError("functional and behaviour live on different scenarios")
    if functional.full is not None:
        return float(np.sum(functional.full * p.entries) + functional.offset)
    table = to_collins_gisin(p)
    return float(np.sum(functional.cg * table.coefficients) + functional.offset)


def chsh_functional(scenario):
    """CHSH in correlator normalisation for a 2-input, 2-output scenario."""
    if (scenario.m_a, scenario.m_b, scenario.o_a, scenario.o_b) != (2, 2, 2, 2):
        raise ValueError("CHSH functional requires the (2,2,2,2) scenario")
    full = np.zeros((2, 2, 2, 2))
    for x, y in itertools.product(range(2), range(2)):
        sign = -1 if x == 1 and y == 1 else 1
        for a, b in itertools.product(range(2), range(2)):
            full[a, b, x, y] = sign * (1 if a == b else -1)
    return BellFunctional(scenario, full=full)


def deterministic_behaviour(scenario, fa, fb):
    """Local deterministic point: a = fa[x], b = fb[y] with certainty."""
    entries = np.zeros((scenario.o_a, scenario.o_b, scenario.m_a, scenario.m_b))
    for x in range(scenario.m_a):
        for y in range(scenario.m_b):
            entries[fa[x], fb[y], x, y] = 1.0
    return Behaviour(scenario, entries)


def local_deterministic_points(scenario):
    """All deterministic behaviours of the scenario (local polytope vertices)."""
    points = []
    for fa in itertools.product(range(scenario.o_a), repeat=scenario.m_a):
        for fb in itertools.product(range(scenario.o_b), repeat=scenario.m_b):
            points.append(deterministic_behaviour(scenario, fa, fb))
    return points


def local_distance(p):
    """Smallest sup-norm distance from p to a local-polytope mixture.

    Solves min_t ||V w - p||_inf <= t over convex weights w by linear
    programming; 0 (up to LP tolerance) means p admits a local model.
    """
    from scipy.optimize import linprog

    vertices = local_deterministic_points(p.scenario)
    v = np.stack([q.entries.ravel() for q in vertices], axis=1)
    n, d = v.shape[1], v.shape[0]
    # variables: [w (n), t (1)]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    a_ub = np.block([[v, -np.ones((d, 1))], [-v, -np.ones((d, 1))]])
    b_ub = np.concatenate([p.entries.ravel(), -p.entries.ravel()])
    a_eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"local polytope LP failed: {res.message}")
    return float(res.fun)


def is_local(p, tol=1e-7):
    """Membership of the local polytope, decided by linear programming."""
    return local_distance(p) < tol


def behaviour_to_json(p):
    """Serialize to the interchange document: scenario + flat (x,y,a,b) records."""
    s = p.scenario
    records = []
    for x in range(s.m_a):
        for y in range(s.m_b):
            for a in range(s.o_a):
                for b in range(s.o_b):
                    records.append({"a": a, "b": b, "x": x, "y": y,
                                    "p": float(p.entries[a, b, x, y])})
    doc = {"scenario": {"mA": s.m_a, "mB": s.m_b, "oA": s.o_a, "oB": s.o_b},
           "records": records}
    if p.unnormalized:
        doc["unnormalized"] = True
    # repr() of a float keeps 17 significant digits, above the required 15
    return json.dumps(doc, indent=1)


def behaviour_from_json(text):
    doc = json.loads(text)
    sc = doc["scenario"]
    s = Scenario(sc["mA"], sc["mB"], sc["oA"], sc["oB"])
    entries = np.full((s.o_a, s.o_b, s.m_a, s.m_b), np.nan)
    for r in doc["records"]:
        entries[r["a"], r["b"], r["x"], r["y"]] = r["p"]
    if np.isnan(entries).any():
        raise ValueError("behaviour document does not cover all (a,b,x,y)")
    return Behaviour(s, entries, unnormalized=doc.get("unnormalized", False))
