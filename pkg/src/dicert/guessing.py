"""Guessing-probability certification via the moment-matrix relaxation.

The adversarial guessing probability is the optimum of a conic program over
branch sub-behaviours summing to the observed behaviour, one branch per guess.
Relaxing each branch to a level-k moment matrix gives a semidefinite program
whose value upper-bounds the guessing probability, so the reported min-entropy
is a certified lower bound.

Solving strategy: zero entries of the behaviour are used to delete the
corresponding degenerate faces (see npa.word_is_dead), branches with zero
observed probability are merged into a single zero-objective branch, and the
explicit Lagrangian dual is handed to the solver.  The dual variables over the
Collins-Gisin constraints form the certifying Bell functional; the primal
moment vectors are recovered from the equality-constraint duals to measure the
primal-dual gap.
"""

from __future__ import annotations

import io
import os
import threading
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .behaviour import BellFunctional, bell_value, to_collins_gisin
from .npa import (
    ZERO_TOLERANCE,
    DeadSet,
    build_monomials,
    collins_gisin_rows,
    functional_coefficients,
    marginal_terms,
    moment_coefficients,
    probability_terms,
)

DEFAULT_LEVEL = "1+AB"
GAP_TOLERANCE = 1e-6
CONSISTENCY_TOLERANCE = 1e-7

# name -> cvxpy solver identifier (or a callable applied to the cvxpy Problem)
_SOLVERS = {
    "clarabel": cp.CLARABEL,
    "scs": cp.SCS,
    "cvxopt": cp.CVXOPT,
}
_SOLVER_OPTIONS = {
    "clarabel": {"max_iter": 200},
    "scs": {"eps": 1e-9, "max_iters": 200000},
    "cvxopt": {},
}


def register_solver(name, backend, options=None):
    """Register a conic backend under ``name``.

    ``backend`` is either a cvxpy solver identifier or a callable
    f(problem, **options) that solves the cvxpy problem in place.
    """
    _SOLVERS[name.lower()] = backend
    _SOLVER_OPTIONS[name.lower()] = dict(options or {})


def available_solvers():
    installed = set(cp.installed_solvers())
    return sorted(n for n, b in _SOLVERS.items()
                  if callable(b) or b in installed)


def resolve_solver(name=None):
    name = (name or os.environ.get("DICERT_SOLVER") or "clarabel").lower()
    if name not in _SOLVERS:
        raise ValueError(f"unknown solver {name!r}; registered: {sorted(_SOLVERS)}")
    return name


@dataclass(frozen=True)
class GuessingProblem:
    """One certification instance.

    side "global": Eve guesses the outcome pair of settings (x_star, y_star),
    one branch per (a, b).  side "local": Eve guesses Alice's outcome at
    x_star, one branch per a.
    """

    behaviour: object
    side: str = "global"
    x_star: int = 0
    y_star: int = 0
    level: str = DEFAULT_LEVEL

    def __post_init__(self):
        if self.side not in ("global", "local"):
            raise ValueError("side must be 'global' or 'local'")
        s = self.behaviour.scenario
        if not (0 <= self.x_star < s.m_a):
            raise ValueError("x_star out of range")
        if self.side == "global" and not (0 <= self.y_star < s.m_b):
            raise ValueError("y_star out of range")

    @property
    def n_branches(self):
        s = self.behaviour.scenario
        return s.o_a * s.o_b if self.side == "global" else s.o_a


@dataclass
class CertificationResult:
    g_upper: float
    min_entropy: float
    dual_functional: BellFunctional | None
    solver_status: str  # optimal | near-optimal | failed
    primal_dual_gap: float
    side: str = "global"
    target: tuple = (0, 0)
    level: str = DEFAULT_LEVEL
    solver: str = ""
    solve_seconds: float = 0.0
    n_branches: int = 0
    block_size: int = 0
    n_moments: int = 0
    primal_residual: float = float("nan")

    def to_dict(self):
        d = {
            "gUpper": self.g_upper,
            "minEntropy": self.min_entropy,
            "solverStatus": self.solver_status,
            "primalDualGap": self.primal_dual_gap,
            "side": self.side,
            "target": list(self.target),
            "level": self.level,
            "solver": self.solver,
            "solveSeconds": self.solve_seconds,
            "nBranches": self.n_branches,
            "blockSize": self.block_size,
            "nMoments": self.n_moments,
            "primalResidual": self.primal_residual,
        }
        if self.dual_functional is not None:
            f = self.dual_functional
            d["dualFunctional"] = {
                "cg": f.cg.tolist() if f.cg is not None else None,
                "full": f.full.tolist() if f.full is not None else None,
                "offset": f.offset,
            }
        return d


def _snap(p_entries, tol=ZERO_TOLERANCE):
    q = np.where(np.abs(p_entries) < tol, 0.0, p_entries)
    if q.min() < 0:
        raise ValueError("behaviour has negative entries beyond tolerance")
    return q


def _branch_objectives(relax, prob):
    """(objective moment vector, observed probability) for each branch."""
    s = prob.behaviour.scenario
    entries = prob.behaviour.entries
    out = []
    if prob.side == "global":
        for a in range(s.o_a):
            for b in range(s.o_b):
                c = moment_coefficients(
                    relax, probability_terms(s, a, b, prob.x_star, prob.y_star))
                out.append((c, float(entries[a, b, prob.x_star, prob.y_star])))
    else:
        for a in range(s.o_a):
            c = moment_coefficients(relax, marginal_terms(s, a, prob.x_star))
            out.append((c, float(entries[a, :, prob.x_star, 0].sum())))
    return out


@dataclass
class _CompiledDual:
    problem: cp.Problem
    t_param: cp.Parameter
    lam: cp.Variable
    constraints: list
    cvecs: list
    keep: np.ndarray
    l_kept: np.ndarray
    relax: object
    id_index: int


# compiled problems carry solver state that is not safe to share across
# threads, so each thread gets its own cache
_CACHES = threading.local()


def _thread_cache(name):
    cache = getattr(_CACHES, name, None)
    if cache is None:
        cache = {}
        setattr(_CACHES, name, cache)
    return cache


def _dual_cache_key(prob, dead, live):
    s = prob.behaviour.scenario
    return (s, prob.level, prob.side, prob.x_star, prob.y_star,
            dead.a_letters, dead.b_letters, dead.ab_pairs, tuple(live))


def _compile_dual(prob, dead, live_mask, objectives):
    relax = build_monomials(prob.behaviour.scenario, prob.level, dead)
    d = relax.size
    l_mat = collins_gisin_rows(relax)
    keep = np.abs(l_mat).sum(axis=1) > 0
    l_kept = l_mat[keep]

    cvecs = [c for (c, _), alive in zip(objectives, live_mask) if alive]
    if not all(live_mask):
        cvecs.append(np.zeros(relax.n_moments))

    struct_t = relax.structure.T.tocsr()
    lam = cp.Variable(int(keep.sum()))
    t_param = cp.Parameter(int(keep.sum()))
    cons = []
    for c in cvecs:
        z = cp.Variable((d, d), PSD=True)
        cons.append(struct_t @ cp.vec(z, order="C") == l_kept.T @ lam - c)
    problem = cp.Problem(cp.Minimize(t_param @ lam), cons)
    return _CompiledDual(problem, t_param, lam, cons, cvecs, keep, l_kept,
                         relax, relax.moment_index[((), ())])


@dataclass
class _CompiledPrimal:
    problem: cp.Problem
    t_param: cp.Parameter
    match_con: object
    xs: list
    cvecs: list
    keep: np.ndarray
    l_kept: np.ndarray
    relax: object


def _compile_primal(prob, dead, live_mask, objectives):
    relax = build_monomials(prob.behaviour.scenario, prob.level, dead)
    d = relax.size
    l_mat = collins_gisin_rows(relax)
    keep = np.abs(l_mat).sum(axis=1) > 0
    l_kept = l_mat[keep]

    cvecs = [c for (c, _), alive in zip(objectives, live_mask) if alive]
    if not all(live_mask):
        cvecs.append(np.zeros(relax.n_moments))

    xs = [cp.Variable(relax.n_moments) for _ in cvecs]
    cons = [cp.reshape(relax.structure @ x, (d, d), order="C") >> 0
            for x in xs]
    t_param = cp.Parameter(int(keep.sum()))
    match = l_kept @ sum(xs) == t_param
    problem = cp.Problem(
        cp.Maximize(sum(c @ x for c, x in zip(cvecs, xs))), cons + [match])
    return _CompiledPrimal(problem, t_param, match, xs, cvecs, keep, l_kept,
                           relax)


def _run_backend(problem, solver, verbose):
    backend = _SOLVERS[solver]
    opts = dict(_SOLVER_OPTIONS.get(solver, {}))
    try:
        if callable(backend):
            backend(problem, **opts)
        else:
            problem.solve(solver=backend, verbose=verbose, **opts)
        return problem.status
    except cp.error.SolverError:
        return "solver_error"


def solve_guessing(prob, solver=None, zero_tol=ZERO_TOLERANCE, verbose=False):
    """Upper-bound the guessing probability; see module docstring for method."""
    solver = resolve_solver(solver)
    entries = _snap(prob.behaviour.entries, zero_tol)
    snapped = type(prob.behaviour)(prob.behaviour.scenario, entries)
    prob = GuessingProblem(snapped, prob.side, prob.x_star, prob.y_star,
                           prob.level)

    dead = DeadSet.from_behaviour(snapped, zero_tol)
    probe = build_monomials(snapped.scenario, prob.level, dead)
    objectives = _branch_objectives(probe, prob)
    live = [obs > 0.0 for _, obs in objectives]

    key = _dual_cache_key(prob, dead, live)

    t_full = to_collins_gisin(snapped).coefficients.ravel()
    target = ((prob.x_star, prob.y_star) if prob.side == "global"
              else (prob.x_star,))

    def finish(g_upper, lam_kept, keep, xs, cvecs, l_kept, t_kept, relax,
               cvxpy_status, elapsed):
        base = dict(side=prob.side, target=target, level=prob.level,
                    solver=solver, solve_seconds=elapsed,
                    n_branches=prob.n_branches, block_size=relax.size,
                    n_moments=relax.n_moments)
        if cvxpy_status not in ("optimal", "optimal_inaccurate") \
                or lam_kept is None:
            return CertificationResult(float("nan"), float("nan"), None,
                                       "failed", float("nan"), **base)
        primal_obj = float(sum(c @ x for c, x in zip(cvecs, xs)))
        residual = float(np.abs(
            sum(l_kept @ x for x in xs) - t_kept).max())
        gap = abs(g_upper - primal_obj)
        lam_full = np.zeros(t_full.size)
        lam_full[keep] = lam_kept
        functional = BellFunctional(
            snapped.scenario, cg=lam_full.reshape(snapped.scenario.cg_shape))
        status = "optimal"
        if cvxpy_status != "optimal" or gap > GAP_TOLERANCE or residual > 1e-5:
            status = "near-optimal"
        g_clip = min(max(g_upper, 1.0 / prob.n_branches), 1.0)
        return CertificationResult(
            g_clip, float(-np.log2(g_clip)), functional, status, gap,
            primal_residual=residual, **base)

    # first attempt: explicit dual (robust on zero-face-reduced instances)
    dual_cache = _thread_cache("dual")
    compiled = dual_cache.get(key)
    if compiled is None:
        compiled = _compile_dual(prob, dead, live, objectives)
        dual_cache[key] = compiled
    if np.abs(t_full[~compiled.keep]).max(initial=0.0) > CONSISTENCY_TOLERANCE:
        raise ValueError("behaviour inconsistent with its own zero pattern")
    t_kept = t_full[compiled.keep]
    compiled.t_param.value = t_kept

    t0 = time.perf_counter()
    cvxpy_status = _run_backend(compiled.problem, solver, verbose)
    elapsed = time.perf_counter() - t0

    lam_kept, xs = None, []
    if compiled.lam.value is not None:
        lam_kept = compiled.lam.value
        xs = [con.dual_value for con in compiled.constraints]
        # sign of the recovered moments is fixed by total normalization +1
        if sum(x[compiled.id_index] for x in xs) < 0:
            xs = [-x for x in xs]
    result = finish(float(compiled.problem.value or np.nan), lam_kept,
                    compiled.keep, xs, compiled.cvecs, compiled.l_kept,
                    t_kept, compiled.relax, cvxpy_status, elapsed)
    if result.solver_status == "optimal":
        return result

    # fallback: primal moment form (better conditioned without zero faces)
    primal_cache = _thread_cache("primal")
    primal = primal_cache.get(key)
    if primal is None:
        primal = _compile_primal(prob, dead, live, objectives)
        primal_cache[key] = primal
    primal.t_param.value = t_kept
    t0 = time.perf_counter()
    cvxpy_status = _run_backend(primal.problem, solver, verbose)
    elapsed += time.perf_counter() - t0

    lam_kept = primal.match_con.dual_value
    if cvxpy_status in ("optimal", "optimal_inaccurate") \
            and primal.problem.value is not None and lam_kept is not None:
        g = float(primal.problem.value)
        # dual sign convention varies with the backend; take the sign whose
        # dual value best matches the primal objective
        if abs(-lam_kept @ t_kept - g) < abs(lam_kept @ t_kept - g):
            lam_kept = -lam_kept
        xs2 = [x.value for x in primal.xs]
        result2 = finish(float(lam_kept @ t_kept), lam_kept, primal.keep,
                         xs2, primal.cvecs, primal.l_kept, t_kept,
                         primal.relax, cvxpy_status, elapsed)
        if result2.solver_status == "optimal" \
                or result.solver_status == "failed" \
                or not result2.primal_dual_gap >= result.primal_dual_gap:
            return result2
    return result


def extract_bell_inequality(result, rescale_to=None):
    """The certifying Bell functional from the dual.

    With ``rescale_to`` set, the coefficients are rescaled so the largest
    absolute entry equals it (comparison aid only; the raw functional is the
    one reproducing g_upper on the behaviour).
    """
    if result.dual_functional is None:
        raise ValueError("no dual functional available (solver failed)")
    f = result.dual_functional
    if rescale_to is None:
        return f
    scale = rescale_to / np.abs(f.cg).max()
    return BellFunctional(f.scenario, cg=f.cg * scale, offset=f.offset * scale)


def fixed_inequality_randomness(p, functional, side="global", x_star=0,
                                y_star=0, level=DEFAULT_LEVEL, solver=None,
                                verbose=False):
    """Guessing probability when only the Bell value of ``functional`` is known.

    The full behaviour-matching constraints are replaced by two scalars: the
    branches reproduce the observed Bell value and sum to a normalized
    behaviour.  This is the fixed-inequality baseline; it never certifies more
    than the full method.
    """
    solver = resolve_solver(solver)
    prob = GuessingProblem(p, side, x_star, y_star, level)
    relax = build_monomials(p.scenario, level)
    objectives = _branch_objectives(relax, prob)
    fvec = functional_coefficients(relax, functional)
    observed = bell_value(p, functional)
    id_idx = relax.moment_index[((), ())]
    d = relax.size

    xs = [cp.Variable(relax.n_moments) for _ in objectives]
    cons = [cp.reshape(relax.structure @ x, (d, d), order="C") >> 0
            for x in xs]
    total = sum(xs)
    con_bell = fvec @ total == observed - functional.offset
    con_norm = total[id_idx] == 1.0
    cons += [con_bell, con_norm]
    objective = cp.Maximize(sum(c @ x for (c, _), x in zip(objectives, xs)))
    problem = cp.Problem(objective, cons)

    backend = _SOLVERS[solver]
    opts = dict(_SOLVER_OPTIONS.get(solver, {}))
    t0 = time.perf_counter()
    try:
        if callable(backend):
            backend(problem, **opts)
        else:
            problem.solve(solver=backend, verbose=verbose, **opts)
        cvxpy_status = problem.status
    except cp.error.SolverError:
        cvxpy_status = "solver_error"
    elapsed = time.perf_counter() - t0

    target = (x_star, y_star) if side == "global" else (x_star,)
    base = dict(side=side, target=target, level=level, solver=solver,
                solve_seconds=elapsed, n_branches=prob.n_branches,
                block_size=d, n_moments=relax.n_moments)
    if cvxpy_status not in ("optimal", "optimal_inaccurate") \
            or problem.value is None:
        return CertificationResult(float("nan"), float("nan"), None, "failed",
                                   float("nan"), **base)

    g_upper = float(problem.value)
    # dual scalars give the certifying affine function of the Bell value
    alpha = con_bell.dual_value
    beta = con_norm.dual_value
    dual_f = None
    gap = float("nan")
    if alpha is not None and beta is not None:
        for sa in (1.0, -1.0):
            a, b = sa * float(alpha), sa * float(beta)
            if abs(a * (observed - functional.offset) + b - g_upper) < 1e-5:
                coeffs = dict(cg=functional.cg * a) if functional.cg is not None \
                    else dict(full=functional.full * a)
                dual_f = BellFunctional(p.scenario,
                                        offset=a * functional.offset + b,
                                        **coeffs)
                gap = abs(a * (observed - functional.offset) + b - g_upper)
                break

    status = "optimal" if cvxpy_status == "optimal" and gap < GAP_TOLERANCE \
        else "near-optimal"
    g_upper = min(max(g_upper, 1.0 / prob.n_branches), 1.0)
    return CertificationResult(
        g_upper, float(-np.log2(g_upper)), dual_f, status, gap, **base)


@dataclass
class SDPInstance:
    """Standard-form description: PSD blocks, equalities, linear objective.

    Entries address symmetric matrices with i <= j; off-diagonal coefficients
    apply to both mirrored positions.
    """

    block_sizes: list
    objective: list = field(default_factory=list)  # (block, i, j, coef)
    equalities: list = field(default_factory=list)  # (terms, rhs)
    description: str = ""


def _moment_positions(relax):
    positions = [[] for _ in range(relax.n_moments)]
    struct = relax.structure.tocoo()
    d = relax.size
    seen = set()
    for flat, m in zip(struct.row, struct.col):
        i, j = divmod(int(flat), d)
        if i > j:
            i, j = j, i
        if (m, i, j) not in seen:
            seen.add((m, i, j))
            positions[m].append((i, j))
    return positions


def build_guessing_sdp(prob, zero_tol=ZERO_TOLERANCE):
    """Entry-level standard-form instance (primarily a debug/exchange dump)."""
    entries = _snap(prob.behaviour.entries, zero_tol)
    snapped = type(prob.behaviour)(prob.behaviour.scenario, entries)
    dead = DeadSet.from_behaviour(snapped, zero_tol)
    relax = build_monomials(snapped.scenario, prob.level, dead)
    positions = _moment_positions(relax)
    reps = [pos[0] for pos in positions]
    objectives = _branch_objectives(relax, GuessingProblem(
        snapped, prob.side, prob.x_star, prob.y_star, prob.level))
    n_blocks = len(objectives)

    inst = SDPInstance([relax.size] * n_blocks,
                       description=f"guessing side={prob.side} "
                                   f"target=({prob.x_star},{prob.y_star}) "
                                   f"level={prob.level}")
    for e, (c, _) in enumerate(objectives):
        for m in np.nonzero(c)[0]:
            i, j = reps[m]
            inst.objective.append((e, i, j, float(c[m])))
    # within-block moment identifications
    for e in range(n_blocks):
        for m, pos in enumerate(positions):
            i0, j0 = pos[0]
            for (i, j) in pos[1:]:
                inst.equalities.append(
                    ([(e, i0, j0, 1.0), (e, i, j, -1.0)], 0.0))
    # behaviour-matching constraints across blocks
    l_mat = collins_gisin_rows(relax)
    t_full = to_collins_gisin(snapped).coefficients.ravel()
    for r in range(l_mat.shape[0]):
        ms = np.nonzero(l_mat[r])[0]
        if ms.size == 0:
            continue
        terms = [(e, reps[m][0], reps[m][1], float(l_mat[r, m]))
                 for e in range(n_blocks) for m in ms]
        inst.equalities.append((terms, float(t_full[r])))
    return inst


def dump_conic_instance(inst, path_or_file):
    """Plain-text dump of an SDPInstance (round-trips with the loader)."""
    def write(f):
        f.write(f"# dicert conic instance: {inst.description}\n")
        f.write(f"blocks {len(inst.block_sizes)}\n")
        for k, sz in enumerate(inst.block_sizes):
            f.write(f"block {k} {sz}\n")
        f.write(f"objective {len(inst.objective)}\n")
        for b, i, j, c in inst.objective:
            f.write(f"obj {b} {i} {j} {c:.17g}\n")
        f.write(f"equalities {len(inst.equalities)}\n")
        for terms, rhs in inst.equalities:
            f.write(f"eq {rhs:.17g} {len(terms)}\n")
            for b, i, j, c in terms:
                f.write(f"term {b} {i} {j} {c:.17g}\n")

    if isinstance(path_or_file, (str, os.PathLike)):
        with open(path_or_file, "w") as f:
            write(f)
    else:
        write(path_or_file)


def load_conic_instance(path_or_file):
    if isinstance(path_or_file, (str, os.PathLike)):
        with open(path_or_file) as f:
            return load_conic_instance(f)
    f: io.TextIOBase = path_or_file
    lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        ln = lines[pos]
        pos += 1
        return ln.split()

    tok = take()
    assert tok[0] == "blocks"
    sizes = [0] * int(tok[1])
    for _ in range(len(sizes)):
        tok = take()
        sizes[int(tok[1])] = int(tok[2])
    inst = SDPInstance(sizes)
    tok = take()
    for _ in range(int(tok[1])):
        t = take()
        inst.objective.append((int(t[1]), int(t[2]), int(t[3]), float(t[4])))
    tok = take()
    for _ in range(int(tok[1])):
        t = take()
        rhs, n = float(t[1]), int(t[2])
        terms = []
        for _ in range(n):
            u = take()
            terms.append((int(u[1]), int(u[2]), int(u[3]), float(u[4])))
        inst.equalities.append((terms, rhs))
    return inst
