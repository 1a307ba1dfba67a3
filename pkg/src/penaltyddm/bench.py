"""Benchmark suites comparing the four schemes over a relaxation grid."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ddm
from .forms import Discretization, balanced_theta, estimate_constants
from .material import omega_rational
from .mesh import MultiBodyProblem, generate_split_body, generate_stacked_blocks
from .oracle import solve_monolithic_penalty

GAMMA_FACTORS = (0.5, 1.0, 1.5)
SCHEMES = tuple(ddm.SCHEME_VARIANTS)


@dataclass(frozen=True)
class Suite:
    """A named benchmark problem.

    ``theta`` is ``theta_factor`` times the balanced penalty of the problem
    (see :func:`penaltyddm.forms.balanced_theta`).
    """

    name: str
    build: Callable[[], MultiBodyProblem]
    theta_factor: float = 1.0
    description: str = ""

    def problem(self) -> MultiBodyProblem:
        return self.build()

    def theta(self, model: Discretization | None = None) -> float:
        model = model or Discretization(self.build())
        return self.theta_factor * balanced_theta(model)


SUITES = {
    s.name: s
    for s in (
        Suite("blocks2-linear", lambda: generate_stacked_blocks(2, 8, load=1.0), description="two blocks, linear material"),
        Suite("blocks3-linear", lambda: generate_stacked_blocks(3, 8, load=1.0), description="three blocks, linear material"),
        Suite(
            "blocks2-nonlinear",
            lambda: generate_stacked_blocks(2, 8, load=200.0, omega=omega_rational(0.5)),
            description="two blocks, rational hardening c = 0.5",
        ),
        Suite("split-body-ideal", lambda: generate_split_body(8, load=1.0), description="square cut by an ideal interface"),
    )
}


def get_suite(name: str) -> Suite:
    if not name:
        raise ValueError("empty suite name")
    try:
        return SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; expected one of {', '.join(SUITES)}") from None


@dataclass(frozen=True)
class BenchRow:
    scheme: str
    gamma_factor: float
    gamma: float
    iterations: int
    converged: bool
    rate: float
    residual: float
    error: float
    status: str


@dataclass
class BenchResult:
    suite: str
    theta: float
    gamma_star: float
    rows: list[BenchRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["suite", "scheme", "gamma_factor", "gamma", "iterations", "converged", "rate", "residual", "error", "status"])
        for r in self.rows:
            w.writerow(
                [
                    self.suite,
                    r.scheme,
                    "%.17g" % r.gamma_factor,
                    "%.17g" % r.gamma,
                    r.iterations,
                    int(r.converged),
                    "%.17g" % r.rate,
                    "%.17g" % r.residual,
                    "%.17g" % r.error,
                    r.status,
                ]
            )
        return buf.getvalue()

    def table(self) -> str:
        """Human-readable table: one block per scheme, one line per gamma."""
        head = f"suite {self.suite}  theta={self.theta:.4g}  gamma*={self.gamma_star:.4g}"
        lines = [head, f"{'scheme':<20} {'gamma':>9} {'iters':>6} {'rate':>8} {'residual':>10} {'error':>10}  status"]
        for r in self.rows:
            lines.append(
                f"{r.scheme:<20} {r.gamma_factor:>5.2f}g* {r.iterations:>6d} {r.rate:>8.4f} "
                f"{r.residual:>10.2e} {r.error:>10.2e}  {r.status}"
            )
        return "\n".join(lines) + "\n"

    def row(self, scheme: str, gamma_factor: float) -> BenchRow:
        for r in self.rows:
            if r.scheme == scheme and r.gamma_factor == gamma_factor:
                return r
        raise KeyError((scheme, gamma_factor))


def run_bench(
    suite: str,
    tol: float = 1e-8,
    max_iters: int = 50000,
    gamma_factors=GAMMA_FACTORS,
    schemes=SCHEMES,
    serial: bool = False,
    progress: Callable[[str], None] | None = None,
) -> BenchResult:
    """Run every scheme for every ``gamma = factor * gamma*`` on a suite.

    Divergence or a failed solve is recorded in the row status; it does not
    abort the benchmark.  ``error`` is the G-norm distance to the monolithic
    solution relative to its norm.
    """
    s = get_suite(suite)
    problem = s.problem()
    model = Discretization(problem)
    theta = s.theta(model)
    ref = solve_monolithic_penalty(model, theta).values
    consts = estimate_constants(model, theta)
    g_star = ddm.gamma_star(consts).value
    rows = []
    for name in schemes:
        for f in gamma_factors:
            gamma = f * g_star
            cfg = ddm.variant_config(
                name, theta, gamma=gamma, tol_rel=tol, tol_res=tol, max_iters=max_iters, gamma_safeguard=False, serial=serial
            )
            G = ddm.g_matrix(model, cfg)
            try:
                state, hist = ddm.solve(model, cfg)
                u = state.values
                status = "converged" if hist.converged else "max-iters"
            except ddm.DivergenceError as exc:
                hist, u, status = exc.history, exc.iterate, "diverged"
            except Exception as exc:  # recorded, not fatal
                hist, u, status = None, None, f"error: {type(exc).__name__}"
            if hist is not None and hist.records:
                err = ddm.g_norm(G, u - ref) / max(ddm.g_norm(G, ref), 1e-300)
                row = BenchRow(name, f, gamma, hist.iterations, hist.converged, hist.rate(), hist.records[-1].residual, err, status)
            else:
                row = BenchRow(name, f, gamma, 0, False, float("nan"), float("nan"), float("nan"), status)
            rows.append(row)
            if progress is not None:
                progress(f"{suite} {name} {f:g}g*: {status} in {row.iterations} iterations")
    return BenchResult(suite, theta, g_star, rows)


def error_ratios(errors) -> np.ndarray:
    """Successive ratios ``e_{k+1} / e_k`` of an error sequence."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return e[1:] / e[:-1]
