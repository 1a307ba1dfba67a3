"""Command-line driver: ``penaltyddm {solve,oracle,audit,bench,derivcheck}``.

Exit status is 0 on success, 1 on bad input (flags, files, invalid
problems) and 2 on a numerical failure (divergence, iteration limit, loss of
coercivity, failed derivative check).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench, ddm, forms, oracle, penalty
from .forms import Discretization
from .linsolve import SolverError
from .material import parse_omega
from .mesh import (
    ContactPairError,
    MultiBodyProblem,
    ProblemFormatError,
    ValidationError,
    generate_split_body,
    generate_stacked_blocks,
    load_problem,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
FIELD_MAGIC = "# penaltyddm field"
GENERATORS = ("blocks2", "blocks3", "split", "square")
PROBLEM_KEYS = ("problem", "generate", "n", "load", "gap", "omega")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _add_problem_flags(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--problem", help="problem file (or, for audit, a field file)")
    src.add_argument("--generate", choices=GENERATORS, help="built-in problem generator")
    p.add_argument("--n", type=int, default=8, help="elements per block side (default 8)")
    p.add_argument("--load", type=float, default=1.0, help="load magnitude for generated problems")
    p.add_argument("--gap", type=float, default=0.0, help="initial gap between stacked blocks")
    p.add_argument("--omega", default=None, help="material nonlinearity: zero, const:c or rational:c")
    p.add_argument("--theta", type=float, default=None, help="penalty parameter (default 1e-4 h / mean mu)")


def _add_iteration_flags(p):
    p.add_argument("--gamma", default="auto", help="relaxation parameter or 'auto'")
    p.add_argument("--policy", default="robin", help="neumann | robin | subset:<tags> | dd-nonstationary")
    p.add_argument("--scheme", default="stationary", choices=[s.value for s in ddm.Scheme])
    p.add_argument("--tol", type=float, default=1e-8, help="step and residual tolerance")
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--serial", action="store_true", help="solve subdomains sequentially")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="penaltyddm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run a domain-decomposition scheme")
    _add_problem_flags(p)
    _add_iteration_flags(p)
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("oracle", help="solve the undecomposed penalty problem by Newton's method")
    _add_problem_flags(p)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--out", default=".")

    p = sub.add_parser("audit", help="check contact conditions of a field file")
    _add_problem_flags(p)
    p.add_argument("--field", help="field file (alternative to passing it as --problem)")
    p.add_argument("--out", default=None, help="also write audit.txt here")

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", required=True, help=", ".join(bench.SUITES))
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=50000)
    p.add_argument("--serial", action="store_true")
    p.add_argument("--out", default=".")

    p = sub.add_parser("derivcheck", help="finite-difference checks of H', H'' and J'")
    _add_problem_flags(p)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


# -- problems and fields -------------------------------------------------------


def make_problem(opts: dict) -> MultiBodyProblem:
    """Build a problem from ``problem``/``generate`` options (as in a field header)."""
    omega = parse_omega(opts["omega"]) if opts.get("omega") else None
    if opts.get("problem"):
        problem = load_problem(opts["problem"])
        return problem.with_omega(omega) if omega is not None else problem
    name = opts.get("generate") or "blocks2"
    n, load, gap = int(opts.get("n", 8)), float(opts.get("load", 1.0)), float(opts.get("gap", 0.0))
    if name in ("blocks2", "blocks3"):
        return generate_stacked_blocks(int(name[-1]), n, gap0=gap, load=load, omega=omega)
    if name in ("split", "square"):
        return generate_split_body(n, load=load, omega=omega, split=name == "split")
    raise InputError(f"unknown generator {name!r}")


def _problem_opts(args) -> dict:
    return {k: getattr(args, k, None) for k in PROBLEM_KEYS}


def write_field(path: Path, model: Discretization, u: np.ndarray, header: dict) -> None:
    lines = [FIELD_MAGIC]
    for k, v in header.items():
        if v is not None:
            lines.append(f"# {k}: {v}")
    for b, body in enumerate(model.problem.bodies):
        nodal = model.dofmap.body_nodal(u, b)
        for nid, (ux, uy) in zip(body.mesh.node_ids, nodal):
            lines.append(f"{body.mesh.body_id} {nid} {ux:.17g} {uy:.17g}")
    path.write_text("\n".join(lines) + "\n")


def read_field(path) -> tuple[dict, list[tuple[int, int, float, float]]]:
    text = Path(path).read_text()
    if not text.startswith(FIELD_MAGIC):
        raise InputError(f"{path}: not a field file")
    header, rows = {}, []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            if ":" in line:
                k, v = line[1:].split(":", 1)
                header[k.strip()] = v.strip()
            continue
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise InputError(f"{path}:{lineno}: expected '<body> <node> <ux> <uy>'")
        rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
    return header, rows


def field_vector(model: Discretization, rows) -> np.ndarray:
    full = np.zeros(model.dofmap.n_full)
    lookup = {}
    for b, body in enumerate(model.problem.bodies):
        for i, nid in enumerate(body.mesh.node_ids):
            lookup[(body.mesh.body_id, int(nid))] = model.dofmap.full_offsets[b] + 2 * i
    for bid, nid, ux, uy in rows:
        if (bid, nid) not in lookup:
            raise InputError(f"field refers to unknown node {nid} of body {bid}")
        k = lookup[(bid, nid)]
        full[k], full[k + 1] = ux, uy
    return model.dofmap.restrict(full)


def _theta(args, problem) -> float:
    theta = problem.default_theta() if args.theta is None else args.theta
    if not theta > 0:
        raise InputError("--theta must be positive")
    return theta


def _gamma(text: str):
    if text == "auto":
        return "auto"
    try:
        g = float(text)
    except ValueError:
        raise InputError(f"--gamma must be a number or 'auto', got {text!r}") from None
    if not g > 0:
        raise InputError("--gamma must be positive")
    return g


# -- subcommands ----------------------------------------------------------------


def cmd_solve(args) -> int:
    problem = make_problem(_problem_opts(args))
    theta = _theta(args, problem)
    policy = penalty.CharFnPolicy.parse(args.policy)
    config = ddm.IterationConfig(
        penalty.PenaltyConfig(theta, policy),
        scheme=ddm.Scheme(args.scheme),
        gamma=_gamma(args.gamma),
        tol_rel=args.tol,
        tol_res=args.tol,
        max_iters=args.max_iters,
        serial=args.serial,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = Discretization(problem)
    header = dict(_problem_opts(args), command="solve", theta=repr(theta), gamma=args.gamma, policy=policy.spec(),
                  scheme=args.scheme, tol=repr(args.tol), max_iters=args.max_iters)
    try:
        state, hist = ddm.solve(model, config)
        status = EXIT_OK if hist.converged else EXIT_NUMERIC
        u = state.values
        msg = f"converged in {hist.iterations} iterations" if hist.converged else f"no convergence in {hist.iterations} iterations"
    except (ddm.DivergenceError, ddm.CoercivityError) as exc:
        hist, u, status, msg = exc.history, exc.iterate, EXIT_NUMERIC, f"failed: {exc}"
    (out / "history.csv").write_text(hist.to_csv())
    header.update(gamma_used=repr(hist.gamma), iterations=hist.iterations, converged=str(hist.converged).lower())
    write_field(out / "solution.field", model, u, header)
    print(f"{msg} (gamma={hist.gamma:.6g}); wrote {out / 'history.csv'} and {out / 'solution.field'}")
    return status


def cmd_oracle(args) -> int:
    problem = make_problem(_problem_opts(args))
    theta = _theta(args, problem)
    model = Discretization(problem)
    info = {}
    try:
        state = oracle.solve_monolithic_penalty(model, theta, tol=args.tol, max_iter=args.max_iters, info=info)
    except oracle.OracleError as exc:
        print(f"oracle failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = dict(_problem_opts(args), command="oracle", theta=repr(theta), tol=repr(args.tol),
                  iterations=info["iterations"], residual=repr(info["residual"]))
    write_field(out / "oracle.field", model, state.values, header)
    print(f"Newton converged in {info['iterations']} iterations; wrote {out / 'oracle.field'}")
    return EXIT_OK


def cmd_audit(args) -> int:
    path = args.field or args.problem
    if not path:
        raise InputError("audit needs a field file (--problem or --field)")
    header, rows = read_field(path)
    opts = {k: header.get(k) for k in PROBLEM_KEYS}
    if opts["problem"] in (None, "None"):
        opts["problem"] = None
    if opts["omega"] in (None, "None"):
        opts["omega"] = None
    problem = make_problem(opts)
    theta = args.theta if args.theta is not None else float(header.get("theta", problem.default_theta()))
    model = Discretization(problem)
    report = oracle.contact_audit(model, field_vector(model, rows), theta)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "audit.txt").write_text(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    result = bench.run_bench(args.suite, tol=args.tol, max_iters=args.max_iters, serial=args.serial)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"bench_{args.suite}.csv").write_text(result.to_csv())
    (out / f"bench_{args.suite}.txt").write_text(result.table())
    sys.stdout.write(result.table())
    return EXIT_OK


def cmd_derivcheck(args) -> int:
    base = make_problem(_problem_opts(args))
    theta = _theta(args, base)
    omegas = [parse_omega(args.omega)] if args.omega else [parse_omega(s) for s in ("zero", "const:0.3", "rational:0.5")]
    rng = np.random.default_rng(args.seed)
    ok = True
    for omega in omegas:
        model = Discretization(base.with_omega(omega))
        checks = {
            "H' vs H": (lambda u: forms.eval_H(model, u), lambda u, v: float(forms.eval_Hprime(model, u) @ v)),
            "J' vs J": (lambda u: penalty.eval_J(model.traces, u, theta),
                        lambda u, v: float(penalty.eval_Jprime(model.traces, u, theta) @ v)),
        }
        worst = {k: 0.0 for k in (*checks, "H'' vs H'")}
        for _ in range(args.samples):
            u, v, w = (forms.strain_sample(model, rng) for _ in range(3))
            for name, (F, dF) in checks.items():
                worst[name] = max(worst[name], oracle.fd_check(F, dF, u, v).best)
            rep = oracle.fd_check(
                lambda x: float(forms.eval_Hprime(model, x) @ v), lambda x, d: float(d @ (forms.eval_Hsecond(model, x) @ v)), u, w
            )
            worst["H'' vs H'"] = max(worst["H'' vs H'"], rep.best)
        for name, err in worst.items():
            passed = err <= 1e-6
            ok &= passed
            print(f"{name:10s} omega={omega.spec():14s} worst relative error {err:.2e}  {'pass' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"solve": cmd_solve, "oracle": cmd_oracle, "audit": cmd_audit, "bench": cmd_bench, "derivcheck": cmd_derivcheck}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (InputError, ProblemFormatError, ValidationError, ContactPairError, OSError, ValueError) as exc:
        print(f"penaltyddm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, forms.ConstantsEstimationError) as exc:
        print(f"penaltyddm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
