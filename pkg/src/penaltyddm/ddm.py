"""Parallel penalty domain-decomposition iterations.

Every scheme is a preconditioned relaxation

    G^k(u~ - u^k, v) = L(v) - Phi(u^k, v),    u^{k+1} = gamma u~ + (1 - gamma) u^k

with ``Phi = A - H' + J'``.  Because the interface form ``X`` never couples two
bodies, ``G^k = A + X^k`` (optionally minus ``H''(u^k)``) is block diagonal and
the correction splits into one independent linear solve per body.  The right
hand side of body ``alpha`` only reads iteration-``k`` data, so the solves can
run concurrently and the result does not depend on their order.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import penalty
from .forms import Discretization, FormConstants, estimate_constants, eval_Hprime, eval_Hsecond
from .linsolve import NotPositiveDefinite, SolverError, factorize
from .mesh import UNILATERAL, MultiBodyProblem
from .penalty import CharFnPolicy, PenaltyConfig

ROUNDOFF_RESIDUAL = 1e-13
DIVERGENCE_WINDOW = 10


class Scheme(str, Enum):
    STATIONARY = "stationary"
    NONSTATIONARY = "nonstationary"
    NEWTON = "newton"


class DivergenceError(RuntimeError):
    """The step norm grew for too many consecutive iterations (or became non-finite)."""

    def __init__(self, message, history=None, iterate=None):
        super().__init__(message)
        self.history = history
        self.iterate = iterate


class CoercivityError(SolverError):
    """A subdomain matrix lost positive definiteness (NewtonLike scheme)."""

    def __init__(self, message, history=None, iterate=None):
        super().__init__(message)
        self.history = history
        self.iterate = iterate


@dataclass(frozen=True)
class IterationConfig:
    """Settings of one iterative solve.

    ``gamma`` is a positive float or ``"auto"`` (use the estimated optimum).
    ``gamma_schedule``/``policy_schedule`` map the iteration index ``k``
    (starting at 0) to a relaxation value or policy and are honoured by the
    nonstationary driver.
    """

    penalty: PenaltyConfig
    scheme: Scheme = Scheme.STATIONARY
    gamma: float | str = "auto"
    tol_rel: float = 1e-8
    tol_res: float = 1e-8
    max_iters: int = 1000
    gamma_safeguard: bool = True
    serial: bool = False
    linear_solver: str = "direct"
    n_samples: int = 20
    seed: int = 0
    gamma_schedule: Callable[[int], float] | None = field(default=None, compare=False)
    policy_schedule: Callable[[int], CharFnPolicy] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.tol_rel > 0 and self.tol_res > 0):
            raise ValueError("stopping tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.gamma != "auto" and not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise ValueError(f"gamma must be positive or 'auto', got {self.gamma!r}")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    step_G: float
    residual: float
    energy: float
    max_penetration: float
    active_set: int
    gamma: float


CSV_COLUMNS = ("k", "step_G", "residual", "energy", "max_penetration", "active_set")


@dataclass
class ConvergenceHistory:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    gamma: float = float("nan")
    gamma_star: float | None = None
    factorizations: int = 0

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def rate(self, skip: int = 3) -> float:
        """Geometric mean of successive step ratios after ``skip`` iterations."""
        steps = self.column("step_G")[skip:]
        steps = steps[steps > 0]
        if len(steps) < 2:
            return 0.0
        return float(np.exp(np.mean(np.diff(np.log(steps)))))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow(
                [r.k, "%.17g" % r.step_G, "%.17g" % r.residual, "%.17g" % r.energy, "%.17g" % r.max_penetration, r.active_set]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class GammaStar:
    value: float
    interval: tuple[float, float]


def gamma_star(
    constants: FormConstants | None = None,
    policy: CharFnPolicy | None = None,
    theta: float | None = None,
    *,
    B_phi: float | None = None,
    B_G: float | None = None,
    D_phi: float | None = None,
) -> GammaStar:
    """Optimal relaxation ``B_phi B_G / D_phi^2`` and the admissible interval.

    From form constants: ``B_G = B_A`` (``X`` is positive semidefinite, so this
    bound holds for every policy), ``B_phi = B`` and
    ``D_phi = M_A + D + D_tilde``.  If ``theta`` differs from the value the
    constants were estimated at, ``D_tilde`` is rescaled (it is proportional
    to ``1/theta``).
    """
    if constants is not None:
        d_tilde = constants.D_tilde
        if theta is not None and theta != constants.theta:
            d_tilde *= constants.theta / theta
        B_phi = constants.B if B_phi is None else B_phi
        B_G = constants.B_A if B_G is None else B_G
        D_phi = constants.M_A + constants.D + d_tilde if D_phi is None else D_phi
    if B_phi is None or B_G is None or D_phi is None:
        raise ValueError("need either form constants or all of B_phi, B_G, D_phi")
    if not (B_phi > 0 and B_G > 0 and D_phi > 0):
        raise ValueError(f"constants must be positive (B_phi={B_phi}, B_G={B_G}, D_phi={D_phi})")
    g = B_phi * B_G / D_phi**2
    return GammaStar(g, (0.0, 2.0 * g))


def as_discretization(problem) -> Discretization:
    if isinstance(problem, Discretization):
        return problem
    if isinstance(problem, MultiBodyProblem):
        return Discretization(problem)
    raise TypeError(f"expected a problem or discretization, got {type(problem).__name__}")


def reference_chars(model: Discretization, policy: CharFnPolicy) -> list[np.ndarray]:
    """Characteristic values defining the fixed G-norm of a policy.

    Stationary policies use their own values; the active-set policy uses
    ``psi = 1`` everywhere, the largest form it can produce.
    """
    if policy.nonstationary:
        return [np.ones(tr.pair.n_points) for tr in model.traces]
    return penalty.characteristic_functions(model.traces, policy)


def g_matrix(model: Discretization, config_or_policy, theta: float | None = None) -> sp.csr_matrix:
    """Matrix of the fixed G-norm used for step sizes and error ratios."""
    if isinstance(config_or_policy, IterationConfig):
        policy, theta = config_or_policy.penalty.policy, config_or_policy.penalty.theta
    else:
        policy = config_or_policy
    X = penalty.assemble_X(model.traces, model.n, theta, reference_chars(model, policy))
    return (model.A + X).tocsr()


def g_norm(G, u) -> float:
    return math.sqrt(max(float(u @ (G @ u)), 0.0))


def penetration_stats(model: Discretization, u: np.ndarray) -> tuple[float, int]:
    """Largest penetration depth and number of penetrating Gauss points."""
    depth, count = 0.0, 0
    for tr in model.traces:
        if tr.pair.kind != UNILATERAL:
            continue
        r = penalty.normal_violation(tr, u)
        if r.size:
            depth = max(depth, float(-r.min()))
            count += int(np.count_nonzero(r < 0.0))
    return max(depth, 0.0), count


def residual_vector(model: Discretization, u: np.ndarray, theta: float, hp=None, jp=None) -> np.ndarray:
    """``Phi(u) - L`` as a vector on the free dofs."""
    if hp is None:
        hp = eval_Hprime(model, u)
    if jp is None:
        jp = penalty.eval_Jprime(model.traces, u, theta)
    return model.A @ u - hp + jp - model.L


class _BodySolvers:
    """Per-body factorisations of a block-diagonal matrix."""

    def __init__(self, model: Discretization, method: str):
        self.slices = model.dofmap.body_slices
        self.method = method
        self.solvers = [None] * len(self.slices)

    def factor(self, M: sp.csr_matrix) -> None:
        for i, s in enumerate(self.slices):
            block = M[s, s]
            self.solvers[i] = factorize(block, self.method, tol=1e-8) if block.shape[0] else None

    def solve(self, rhs: np.ndarray, pool: ThreadPoolExecutor | None) -> np.ndarray:
        def one(i):
            s = self.slices[i]
            if self.solvers[i] is None:
                return np.zeros(s.stop - s.start)
            return self.solvers[i].solve(rhs[s])

        idx = range(len(self.slices))
        parts = list(pool.map(one, idx)) if pool is not None else [one(i) for i in idx]
        return np.concatenate(parts) if parts else np.zeros(0)


def subdomain_solve(model: Discretization, alpha: int, u_k: np.ndarray, theta: float, chars, newton: bool = False):
    """Correction-free subdomain update ``u~_alpha`` for body ``alpha``.

    Solves ``(A_a + X_a [- H''_a]) u~ = l_a + X_a u^k + h'_a(u^k) - j_a(u^k) [- H''_a u^k]``
    where every term on the right is evaluated at iteration ``k``.  This is
    the unbatched form of what :func:`solve` does for all bodies at once.
    """
    s = model.dofmap.body_slices[alpha]
    X = penalty.assemble_X(model.traces, model.n, theta, chars)
    M = model.A + X
    rhs = model.L + X @ u_k + eval_Hprime(model, u_k) - penalty.eval_Jprime(model.traces, u_k, theta)
    if newton:
        Hs = eval_Hsecond(model, u_k)
        M = M - Hs
        rhs = rhs - Hs @ u_k
    block = sp.csr_matrix(M)[s, s]
    if block.shape[0] == 0:
        return np.zeros(0)
    return factorize(block, "direct").solve(rhs[s])


def _resolve_gamma(model, config: IterationConfig, history: ConvergenceHistory) -> float:
    if config.gamma != "auto":
        return float(config.gamma)
    consts = estimate_constants(model, config.penalty.theta, config.n_samples, config.seed)
    g = gamma_star(consts, config.penalty.policy, config.penalty.theta).value
    history.gamma_star = g
    return g


def _iterate(model: Discretization, config: IterationConfig, u0, callback, nonstationary: bool, newton: bool):
    theta = config.penalty.theta
    history = ConvergenceHistory()
    gamma = _resolve_gamma(model, config, history)
    history.gamma = gamma
    G = g_matrix(model, config)
    f_dual = model.force_scale(theta)
    n = model.n
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=float)
    if u.shape != (n,):
        raise ValueError(f"initial state has length {u.size}, expected {n}")

    solvers = _BodySolvers(model, config.linear_solver)
    current_key = x_key = None
    X = AX = None
    pool = None if config.serial or model.dofmap.n_bodies < 2 else ThreadPoolExecutor(model.dofmap.n_bodies)
    hp = eval_Hprime(model, u)
    jp = penalty.eval_Jprime(model.traces, u, theta)
    growth, increases, prev_step = 0, 0, None
    try:
        for k in range(config.max_iters):
            policy = config.policy_schedule(k) if (nonstationary and config.policy_schedule) else config.penalty.policy
            if nonstationary and config.gamma_schedule is not None:
                gamma = float(config.gamma_schedule(k))
            chars = penalty.characteristic_functions(model.traces, policy, u)
            key = tuple(c.tobytes() for c in chars)
            if key != x_key:
                X = penalty.assemble_X(model.traces, n, theta, chars)
                AX = (model.A + X).tocsr()
                x_key = key
            rhs = model.L + X @ u + hp - jp
            M = AX
            if newton:
                Hs = eval_Hsecond(model, u)
                if Hs.nnz:
                    M = M - Hs
                    rhs = rhs - Hs @ u
                    key = None  # refactor every iteration
            if key is None or key != current_key:
                try:
                    solvers.factor(M)
                except NotPositiveDefinite as exc:
                    raise CoercivityError(f"iteration {k}: subdomain matrix not positive definite ({exc})", history, u) from exc
                history.factorizations += 1
                current_key = key
            try:
                u_tilde = solvers.solve(rhs, pool)
            except SolverError as exc:
                raise SolverError(f"iteration {k}: subdomain solve failed: {exc}") from exc
            u_new = gamma * u_tilde + (1.0 - gamma) * u
            if not np.all(np.isfinite(u_new)):
                raise DivergenceError(f"iteration {k}: non-finite iterate", history, u)

            step = g_norm(G, u_new - u)
            hp = eval_Hprime(model, u_new)
            jp = penalty.eval_Jprime(model.traces, u_new, theta)
            res = model.dual_norm(residual_vector(model, u_new, theta, hp, jp))
            depth, active = penetration_stats(model, u_new)
            rec = IterationRecord(k + 1, step, res, model.energy(u_new, theta), depth, active, gamma)
            history.records.append(rec)
            u = u_new
            if callback is not None:
                callback(k + 1, u, rec)

            unorm = g_norm(G, u)
            res_ok = res <= config.tol_res * f_dual or res <= ROUNDOFF_RESIDUAL * max(f_dual, 1e-300)
            step_ok = step <= config.tol_rel * unorm or res <= ROUNDOFF_RESIDUAL * f_dual or unorm == 0.0
            if res_ok and step_ok:
                history.converged = True
                break

            if prev_step is not None and step > prev_step:
                growth += 1
                increases += 1
            else:
                growth, increases = 0, 0
            prev_step = step
            if growth >= DIVERGENCE_WINDOW:
                raise DivergenceError(
                    f"step norm grew for {DIVERGENCE_WINDOW} consecutive iterations (gamma={gamma:.4g})", history, u
                )
            if config.gamma_safeguard and increases >= 2 and not (nonstationary and config.gamma_schedule):
                gamma *= 0.5
                increases = 0
                history.gamma = gamma
    finally:
        if pool is not None:
            pool.shutdown()
    return model.state(u), history


def solve(problem, config: IterationConfig, u0=None, callback=None):
    """Run the scheme selected by ``config.scheme`` and return ``(state, history)``.

    Parameters
    ----------
    problem : MultiBodyProblem or Discretization
    config : IterationConfig
    u0 : array, optional
        Warm start on the free dofs (default zero).
    callback : callable, optional
        Called as ``callback(k, u, record)`` after every iteration.

    Raises
    ------
    DivergenceError
        The step norm grew for 10 consecutive iterations.
    CoercivityError
        A NewtonLike subdomain matrix was not positive definite.
    """
    model = as_discretization(problem)
    if config.scheme is Scheme.NEWTON:
        return solve_newton_like(model, config, u0, callback)
    if config.scheme is Scheme.NONSTATIONARY or config.penalty.policy.nonstationary:
        return solve_nonstationary(model, config, u0, callback)
    return _iterate(model, config, u0, callback, nonstationary=False, newton=False)


def solve_nonstationary(problem, config: IterationConfig, u0=None, callback=None):
    """Iteration with ``X^k`` (and optionally ``gamma``) changing from step to step.

    The characteristic functions are recomputed from the current iterate each
    step; subdomain matrices are refactorised only when they change.
    """
    model = as_discretization(problem)
    return _iterate(model, config, u0, callback, nonstationary=True, newton=False)


def solve_newton_like(problem, config: IterationConfig, u0=None, callback=None):
    """Iteration with ``G^k = A - H''(u^k) + X^k``, refactorised every step."""
    model = as_discretization(problem)
    return _iterate(model, config, u0, callback, nonstationary=config.penalty.policy.nonstationary, newton=True)


# Named scheme variants used by the benchmark driver.
SCHEME_VARIANTS = {
    "neumann-neumann": (Scheme.STATIONARY, penalty.NEUMANN_NEUMANN),
    "robin-robin": (Scheme.STATIONARY, penalty.ROBIN_ROBIN),
    "dirichlet-dirichlet": (Scheme.NONSTATIONARY, penalty.DIRICHLET_DIRICHLET),
    "newton-like": (Scheme.NEWTON, penalty.ROBIN_ROBIN),
}


def variant_config(name: str, theta: float, **kwargs) -> IterationConfig:
    scheme, policy = SCHEME_VARIANTS[name]
    return IterationConfig(PenaltyConfig(theta, policy), scheme=scheme, **kwargs)


def with_gamma(config: IterationConfig, gamma) -> IterationConfig:
    return replace(config, gamma=gamma)
