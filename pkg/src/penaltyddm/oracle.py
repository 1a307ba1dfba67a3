"""Reference computations that the iterative schemes are checked against.

The monolithic solver minimises the full penalised energy with a damped
semismooth Newton method over the coupled space.  It shares assembly of the
forms with the rest of the package but none of the iteration logic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import penalty
from .dofs import DisplacementState
from .forms import Discretization, eval_H, eval_Hprime, eval_Hsecond
from .mesh import UNILATERAL, MultiBodyProblem


class OracleError(RuntimeError):
    pass


def _model(problem) -> Discretization:
    if isinstance(problem, Discretization):
        return problem
    if isinstance(problem, MultiBodyProblem):
        return Discretization(problem)
    raise TypeError(f"expected a problem or discretization, got {type(problem).__name__}")


def _vector(u) -> np.ndarray:
    return u.values if isinstance(u, DisplacementState) else np.asarray(u, dtype=float)


def penalty_jacobian(model: Discretization, u: np.ndarray, theta: float) -> sp.csr_matrix:
    """Generalised derivative of ``J'`` with the ``min(0, .)`` branch frozen at ``u``.

    Points with zero violation are treated as separated.
    """
    n = model.n
    rows = []
    for tr in model.traces:
        w = tr.weights
        if tr.pair.kind == UNILATERAL:
            active = (tr.pair.gap - tr.na @ u - tr.nb @ u) < 0.0
            T = (tr.na + tr.nb)[active]
            rows.append(T.T @ sp.diags(w[active]) @ T)
        else:
            T = tr.va - tr.vb
            rows.append(T.T @ sp.diags(np.concatenate([w, w])) @ T)
    K = sp.csr_matrix((n, n))
    for r in rows:
        K = K + r
    return (K / theta).tocsr()


def solve_monolithic_penalty(
    problem,
    theta: float,
    tol: float = 1e-12,
    max_iter: int = 200,
    u0=None,
    info: dict | None = None,
) -> DisplacementState:
    """Minimise ``F(u) = A(u,u)/2 - H(u) - L(u) + J(u)`` by damped Newton.

    The Jacobian is ``A - H''(u) + J''`` with the penalty branch frozen per
    step; an Armijo line search on ``F`` globalises it.  When the energy
    decrease drops below round-off, a step is accepted if it reduces the
    gradient norm instead.  Converged when the dual norm of the gradient is
    at most ``tol`` times the force scale (see
    :meth:`Discretization.force_scale`), or exactly zero.

    If ``info`` is given it receives ``iterations``, ``energies`` (one per
    accepted iterate, starting with ``u0``) and ``residual``.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    model = _model(problem)
    n = model.n
    u = np.zeros(n) if u0 is None else _vector(u0).copy()
    A, L = model.A, model.L

    def energy(x):
        return 0.5 * float(x @ (A @ x)) - eval_H(model, x) - float(L @ x) + penalty.eval_J(model.traces, x, theta)

    def gradient(x):
        return A @ x - eval_Hprime(model, x) - L + penalty.eval_Jprime(model.traces, x, theta)

    target = tol * model.force_scale(theta)
    F = energy(u)
    g = gradient(u)
    res = model.dual_norm(g)
    energies = [F]
    it = 0
    while not (res <= target or res == 0.0):
        if it >= max_iter:
            raise OracleError(f"Newton did not converge in {max_iter} iterations (residual {res:.3g}, target {target:.3g})")
        K = (A - eval_Hsecond(model, u) + penalty_jacobian(model, u, theta)).tocsc()
        d = spla.spsolve(K, -g)
        if not np.all(np.isfinite(d)):
            raise OracleError(f"iteration {it}: singular Newton system")
        slope = float(g @ d)
        if slope >= 0.0:
            raise OracleError(f"iteration {it}: Newton direction is not a descent direction")
        alpha, accepted = 1.0, False
        gnorm = float(np.linalg.norm(g))
        for _ in range(60):
            trial = u + alpha * d
            Ft = energy(trial)
            if Ft <= F + 1e-4 * alpha * slope:
                accepted = True
                break
            # near the minimum F is flat to round-off; fall back on the gradient
            if abs(Ft - F) <= 1e-12 * max(abs(F), 1.0):
                gt = gradient(trial)
                if np.linalg.norm(gt) < gnorm:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            raise OracleError(f"iteration {it}: line search failed (residual {res:.3g})")
        u = trial
        F = Ft
        g = gradient(u)
        res = model.dual_norm(g)
        energies.append(F)
        it += 1
    if info is not None:
        info.update(iterations=it, energies=energies, residual=res)
    return model.state(u)


@dataclass(frozen=True)
class FDReport:
    """Central-difference comparison over a sweep of step sizes."""

    steps: tuple[float, ...]
    errors: tuple[float, ...]
    exact: float
    tol: float

    @property
    def best(self) -> float:
        return min(self.errors)

    @property
    def passed(self) -> bool:
        return self.best <= self.tol


def fd_check(F, dF, u, v, hs=(1e-4, 1e-5, 1e-6), tol: float = 1e-6, scale: bool = True) -> FDReport:
    """Compare a claimed directional derivative with central differences.

    Parameters
    ----------
    F : callable ``F(u) -> float``
    dF : callable ``dF(u, v) -> float``, the claimed derivative at ``u`` along ``v``
    hs : step sizes; with ``scale`` each is multiplied by ``|u| / |v|``
        (max norms; ``1 / |v|`` when ``u = 0``) so the perturbation is
        relative to the state.

    The relative error is ``|fd - exact| / max(|exact|, |fd|)`` (0 when both
    vanish).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    exact = float(dF(u, v))
    factor = 1.0
    if scale:
        vmax = float(np.max(np.abs(v))) if v.size else 0.0
        umax = float(np.max(np.abs(u))) if u.size else 0.0
        factor = (umax if umax > 0 else 1.0) / vmax if vmax > 0 else 1.0
    steps, errors = [], []
    for h in hs:
        hh = h * factor
        fd = (F(u + hh * v) - F(u - hh * v)) / (2.0 * hh)
        denom = max(abs(exact), abs(fd))
        errors.append(0.0 if denom == 0.0 else abs(fd - exact) / denom)
        steps.append(hh)
    return FDReport(tuple(steps), tuple(errors), exact, tol)


@dataclass
class AuditReport:
    """Contact conditions recovered from a displacement field.

    Tractions follow the penalty relation: normal traction
    ``sigma_n = min(0, d - u_an - u_bn) / theta`` on unilateral pairs and
    ``(u_b - u_a) / theta`` on ideal ones (acting on side ``a``).
    """

    max_penetration: float = 0.0
    max_sigma_n: float = 0.0
    min_sigma_n: float = 0.0
    mean_sigma_n: float = 0.0
    complementarity: float = 0.0
    ideal_mismatch: float = 0.0
    ideal_traction: float = 0.0
    stress_scale: float = 0.0
    sign_clamp_ok: bool = True
    sigma_n: list = field(default_factory=list, repr=False)

    def to_text(self) -> str:
        keys = (
            "max_penetration",
            "max_sigma_n",
            "min_sigma_n",
            "mean_sigma_n",
            "complementarity",
            "ideal_mismatch",
            "ideal_traction",
            "stress_scale",
        )
        lines = [f"{k}: {getattr(self, k):.17g}" for k in keys]
        lines.append(f"sign_clamp_ok: {str(self.sign_clamp_ok).lower()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AuditReport":
        vals = {}
        for line in text.splitlines():
            if ":" in line:
                k, v = line.split(":", 1)
                vals[k.strip()] = v.strip()
        out = cls()
        for k, v in vals.items():
            if k == "sign_clamp_ok":
                out.sign_clamp_ok = v == "true"
            elif hasattr(out, k):
                setattr(out, k, float(v))
        return out


def contact_audit(problem, u, theta: float) -> AuditReport:
    """Penetration, recovered tractions and complementarity of a state."""
    model = _model(problem)
    u = _vector(u)
    rep = AuditReport()
    total_w, total_s = 0.0, 0.0
    stress = 0.0
    for b in range(model.dofmap.n_bodies):
        s = model.element_stresses(u, b)
        if len(s):
            stress = max(stress, float(np.max(np.sqrt(np.einsum("mij,mij->m", s, s)))))
    rep.stress_scale = stress
    sig_max = -math.inf
    for tr in model.traces:
        w = tr.weights
        if tr.pair.kind == UNILATERAL:
            r = penalty.normal_violation(tr, u)
            sig = np.minimum(r, 0.0) / theta
            rep.sigma_n.append(sig)
            if not r.size:
                continue
            rep.max_penetration = max(rep.max_penetration, float(max(-r.min(), 0.0)))
            sig_max = max(sig_max, float(sig.max()))
            rep.min_sigma_n = min(rep.min_sigma_n, float(sig.min()))
            total_w += float(w.sum())
            total_s += float(w @ sig)
            sep = r >= 0.0
            if np.any(sep):
                rep.complementarity = max(rep.complementarity, float(np.max(np.abs(r[sep] * sig[sep]))))
        else:
            jump = (tr.va @ u - tr.vb @ u).reshape(2, -1)
            mag = np.hypot(jump[0], jump[1])
            if mag.size:
                rep.ideal_mismatch = max(rep.ideal_mismatch, float(mag.max()))
                rep.ideal_traction = max(rep.ideal_traction, float(mag.max()) / theta)
    rep.max_sigma_n = sig_max if np.isfinite(sig_max) else 0.0
    rep.mean_sigma_n = total_s / total_w if total_w else 0.0
    rep.sign_clamp_ok = rep.max_sigma_n <= 1e-10 * max(stress, 1.0)
    return rep
