"""Finite-element forms of the penalised contact problem.

All operators act on the reduced vector of free dofs (Dirichlet dofs removed).
On P1 triangles strains are constant, so one-point quadrature integrates the
bilinear form, the energy and both derivatives exactly.  Element kernels use
the packed strain ``t = B u_e`` (see :mod:`penaltyddm.material`):

* bilinear form:  ``area * (lam (m.B)^T (m.B) + 2 mu B^T B)``
* nonlinear energy:  ``3 mu W(e) area`` with ``W(e) = int_0^e z omega(z) dz``
* first derivative:  ``2 mu omega(e) Bd^T s area``, ``s = Bd u_e``
* second derivative:  ``2 mu [omega Bd^T Bd + omega'(e) 2/(3e) (Bd^T s)(Bd^T s)^T] area``

where ``Bd`` is the deviatoric part of ``B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import penalty
from .dofs import DofMap, DisplacementState
from .linsolve import SPDFactor
from .material import DEVIATOR, TRACE_ROW, packed_intensity, shape_gradients, strain_operator
from .mesh import MultiBodyProblem, ValidationError

INTENSITY_FLOOR = 1e-14


class ConstantsEstimationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class _BodyFE:
    area: np.ndarray  # (m,)
    B: np.ndarray  # (m, 4, 6) packed strain operator
    Bdev: np.ndarray  # (m, 4, 6) deviatoric part
    Btr: np.ndarray  # (m, 6) volume strain row
    edofs: np.ndarray  # (m, 6) full global dof indices
    lam: np.ndarray
    mu: np.ndarray
    omega: object


class Discretization:
    """A problem together with its dof map, element data and contact traces.

    Built once per problem; everything derived from it is immutable.
    """

    def __init__(self, problem: MultiBodyProblem):
        self.problem = problem
        self.dofmap = DofMap.build(
            [b.mesh.n_nodes for b in problem.bodies],
            [b.mesh.dirichlet_nodes() for b in problem.bodies],
        )
        self.bodies: list[_BodyFE] = []
        for i, body in enumerate(problem.bodies):
            mesh = body.mesh
            area, grads = shape_gradients(mesh.element_coords())
            if np.any(area <= 0.0):
                e = int(np.argmax(area <= 0.0))
                raise ValidationError(f"body {mesh.body_id}: degenerate element {mesh.element_ids[e]}")
            B = strain_operator(grads)
            Bdev = np.einsum("ij,mjk->mik", DEVIATOR, B)
            Btr = np.einsum("j,mjk->mk", TRACE_ROW, B)
            base = self.dofmap.full_offsets[i] + 2 * mesh.elements
            edofs = np.stack([base[:, 0], base[:, 0] + 1, base[:, 1], base[:, 1] + 1, base[:, 2], base[:, 2] + 1], axis=1)
            lam, mu = body.material.per_element(len(mesh.elements))
            self.bodies.append(_BodyFE(area, B, Bdev, Btr, edofs, lam, mu, body.material.omega))
        self.traces = tuple(penalty.build_traces(self.dofmap, p) for p in problem.pairs)

    @property
    def n(self) -> int:
        return self.dofmap.n_free

    def state(self, u: np.ndarray) -> DisplacementState:
        return DisplacementState(np.asarray(u, dtype=float), self.dofmap)

    # -- element-level helpers ------------------------------------------------

    def _element_dofs(self, fe: _BodyFE, u: np.ndarray) -> np.ndarray:
        full = self.dofmap.expand(u)
        return full[fe.edofs]

    def _scatter_vector(self, fe: _BodyFE, local: np.ndarray, out_full: np.ndarray) -> None:
        np.add.at(out_full, fe.edofs.ravel(), local.ravel())

    @cached_property
    def _pattern(self):
        """CSR pattern of element matrices on the free dofs and, per body, where each entry lands."""
        n = self.n
        f2f = self.dofmap.full_to_free
        per_body, keys = [], []
        for fe in self.bodies:
            r = f2f[np.repeat(fe.edofs, 6, axis=1).ravel()]
            c = f2f[np.tile(fe.edofs, (1, 6)).ravel()]
            keep = (r >= 0) & (c >= 0)
            keys.append(r[keep] * n + c[keep])
            per_body.append(keep)
        uniq, inv = np.unique(np.concatenate(keys), return_inverse=True)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // n, minlength=n))])
        bounds = np.cumsum([0] + [len(k) for k in keys])
        positions = [(keep, inv[bounds[i] : bounds[i + 1]]) for i, keep in enumerate(per_body)]
        return indptr, uniq % n, positions

    def _scatter_matrix(self, blocks) -> sp.csr_matrix:
        if not blocks:
            return sp.csr_matrix((self.n, self.n))
        indptr, indices, positions = self._pattern
        data = np.zeros(len(indices))
        for fe, ke in blocks:
            keep, pos = positions[next(i for i, b in enumerate(self.bodies) if b is fe)]
            data += np.bincount(pos, weights=ke.reshape(-1)[keep], minlength=len(indices))
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(self.n, self.n))

    def element_strains(self, u: np.ndarray, body: int) -> np.ndarray:
        """Packed strains ``(m, 4)`` of one body."""
        fe = self.bodies[body]
        return np.einsum("mij,mj->mi", fe.B, self._element_dofs(fe, u))

    def element_stresses(self, u: np.ndarray, body: int) -> np.ndarray:
        """Stress tensors ``(m, 3, 3)`` of one body from the nonlinear law."""
        fe = self.bodies[body]
        t = self.element_strains(u, body)
        theta = t[:, :3].sum(axis=1)
        s = t @ DEVIATOR.T
        e = packed_intensity(s)
        w = fe.omega(e)
        packed = fe.lam[:, None] * theta[:, None] * TRACE_ROW + 2.0 * fe.mu[:, None] * (t - w[:, None] * s)
        out = np.zeros((len(t), 3, 3))
        out[:, 0, 0], out[:, 1, 1], out[:, 2, 2] = packed[:, 0], packed[:, 1], packed[:, 2]
        out[:, 0, 1] = out[:, 1, 0] = packed[:, 3] / math.sqrt(2.0)
        return out

    # -- cached operators -------------------------------------------------------

    @cached_property
    def A(self) -> sp.csr_matrix:
        return assemble_A(self)

    @cached_property
    def L(self) -> np.ndarray:
        return assemble_L(self)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        full = np.zeros(self.dofmap.n_full)
        for fe in self.bodies:
            self._scatter_vector(fe, np.repeat(fe.area[:, None] / 3.0, 6, axis=1), full)
        return self.dofmap.restrict(full)

    @cached_property
    def norm_matrix(self) -> sp.csr_matrix:
        """Discrete V0 inner product: linear stiffness plus scaled lumped mass.

        The mass is scaled by ``mean(mu) / diameter^2`` so both terms carry
        stiffness units.
        """
        scale = self.problem.mean_mu() / self.problem.diameter() ** 2
        return (self.A + sp.diags(scale * self.lumped_mass)).tocsr()

    @cached_property
    def _norm_factor(self) -> SPDFactor:
        return SPDFactor(self.norm_matrix, tol=1e-8)

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(float(u @ (self.norm_matrix @ u)), 0.0))

    def dual_norm(self, r: np.ndarray) -> float:
        """``sup_v r.v / |v|`` in the V0 norm."""
        if self.n == 0:
            return 0.0
        z = self._norm_factor.solve(r)
        return math.sqrt(max(float(r @ z), 0.0))

    def force_scale(self, theta: float) -> float:
        """Dual norm of the loading: external forces or initial interference.

        ``max(|L|*, |J'(0)|*)``; the second term is nonzero only when some
        unilateral gap is negative in the reference configuration.
        """
        return max(self.dual_norm(self.L), self.dual_norm(penalty.eval_Jprime(self.traces, np.zeros(self.n), theta)))

    def energy(self, u: np.ndarray, theta: float) -> float:
        """Penalised total energy ``A(u,u)/2 - H(u) - L(u) + J(u)``."""
        return (
            0.5 * float(u @ (self.A @ u)) - eval_H(self, u) - float(self.L @ u) + penalty.eval_J(self.traces, u, theta)
        )


def assemble_A(model: Discretization) -> sp.csr_matrix:
    """Bilinear elastic form on the free dofs; block diagonal by body."""
    blocks = []
    for fe in model.bodies:
        ke = fe.area[:, None, None] * (
            fe.lam[:, None, None] * np.einsum("mi,mj->mij", fe.Btr, fe.Btr)
            + 2.0 * fe.mu[:, None, None] * np.einsum("mki,mkj->mij", fe.B, fe.B)
        )
        blocks.append((fe, ke))
    return model._scatter_matrix(blocks)


def assemble_L(model: Discretization) -> np.ndarray:
    """External work vector: constant volume forces and boundary tractions.

    Volume force: ``f * area / 3`` per vertex.  Traction on an edge of length
    ``l``: ``p * l / 2`` per end node.
    """
    full = np.zeros(model.dofmap.n_full)
    off = model.dofmap.full_offsets
    for i, (body, fe) in enumerate(zip(model.problem.bodies, model.bodies)):
        fx, fy = body.body_force
        if fx or fy:
            local = np.tile([fx, fy], 3)[None, :] * fe.area[:, None] / 3.0
            model._scatter_vector(fe, local, full)
        mesh = body.mesh
        for tag, (tx, ty) in body.tractions.items():
            if tag not in mesh.tags():
                raise ValidationError(f"body {mesh.body_id}: traction on unknown tag {tag!r}")
            if tag == "dirichlet" or any(
                (p.body_a == i and p.tag_a == tag) or (p.body_b == i and p.tag_b == tag) for p in model.problem.pairs
            ):
                raise ValidationError(f"body {mesh.body_id}: traction on non-Neumann tag {tag!r}")
            edges = mesh.edges_with_tag(tag)
            d = mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]
            half = 0.5 * np.hypot(d[:, 0], d[:, 1])
            for end in (0, 1):
                np.add.at(full, off[i] + 2 * edges[:, end], tx * half)
                np.add.at(full, off[i] + 2 * edges[:, end] + 1, ty * half)
    return model.dofmap.restrict(full)


def eval_H(model: Discretization, u: np.ndarray) -> float:
    """Nonlinear energy ``3 int mu W(e(u))``."""
    total = 0.0
    for fe in model.bodies:
        s = np.einsum("mij,mj->mi", fe.Bdev, model._element_dofs(fe, u))
        e = packed_intensity(s)
        total += 3.0 * float(np.sum(fe.mu * fe.area * fe.omega.energy(e)))
    return total


def eval_Hprime(model: Discretization, u: np.ndarray) -> np.ndarray:
    """Gradient ``r`` of the nonlinear energy: ``r . v = 2 int mu omega(e) e(u):e(v)``."""
    full = np.zeros(model.dofmap.n_full)
    for fe in model.bodies:
        s = np.einsum("mij,mj->mi", fe.Bdev, model._element_dofs(fe, u))
        w = fe.omega(packed_intensity(s))
        coef = 2.0 * fe.mu * w * fe.area
        if not np.any(coef):
            continue
        local = coef[:, None] * np.einsum("mij,mi->mj", fe.Bdev, s)
        model._scatter_vector(fe, local, full)
    return model.dofmap.restrict(full)


def eval_Hsecond(model: Discretization, u: np.ndarray) -> sp.csr_matrix:
    """Symmetric matrix ``M`` with ``w^T M v = H''(u, v, w)``.

    The ``omega'`` term carries ``1/e``; it is dropped where
    ``e <= 1e-14`` (its limit is zero for the shipped families).
    """
    blocks = []
    for fe in model.bodies:
        s = np.einsum("mij,mj->mi", fe.Bdev, model._element_dofs(fe, u))
        e = packed_intensity(s)
        w = fe.omega(e)
        dw = fe.omega.deriv(e)
        if not (np.any(w) or np.any(dw)):
            continue
        coef = 2.0 * fe.mu * fe.area
        ke = (coef * w)[:, None, None] * np.einsum("mki,mkj->mij", fe.Bdev, fe.Bdev)
        big = e > INTENSITY_FLOOR
        if np.any(big & (dw != 0.0)):
            g = np.einsum("mij,mi->mj", fe.Bdev, s)
            scale = np.zeros_like(e)
            scale[big] = coef[big] * dw[big] * 2.0 / (3.0 * e[big])
            ke = ke + scale[:, None, None] * np.einsum("mi,mj->mij", g, g)
        blocks.append((fe, ke))
    return model._scatter_matrix(blocks)


def deviatoric_form(model: Discretization) -> sp.csr_matrix:
    """``2 int mu e(u):e(v)``, the envelope of the nonlinear second derivative."""
    blocks = []
    for fe in model.bodies:
        ke = (2.0 * fe.mu * fe.area)[:, None, None] * np.einsum("mki,mkj->mij", fe.Bdev, fe.Bdev)
        blocks.append((fe, ke))
    return model._scatter_matrix(blocks)


# --------------------------------------------------------------------------
# Constants of the convergence theory


@dataclass(frozen=True)
class FormConstants:
    """Conservative estimates relative to the discrete V0 norm.

    ``M_A``/``B_A``: continuity/coercivity of the bilinear form;
    ``D``: bound on the second derivative of ``H``;
    ``B``: coercivity of ``A - H''``;
    ``C``: margin in ``(1 - C) A(u,u) >= 2 H(u)``;
    ``D_tilde``: Lipschitz constant of the penalty derivative;
    ``R``/``R_tilde``: largest sampled dual norms of ``H'`` and ``J'``.
    """

    M_A: float
    B_A: float
    D: float
    B: float
    C: float
    D_tilde: float
    R: float
    R_tilde: float
    theta: float


def generalized_extreme(K, N, which: str, maxiter: int = 5000) -> tuple[float, np.ndarray]:
    """Largest (``which='max'``) or smallest (``'min'``) eigenpair of ``K x = lam N x``.

    ``N`` must be SPD; ``K`` symmetric.  Small problems are solved densely.
    """
    n = K.shape[0]
    if n == 0:
        return 0.0, np.zeros(0)
    if n <= 400:
        import scipy.linalg as sla

        vals, vecs = sla.eigh(sp.csr_matrix(K).toarray(), sp.csr_matrix(N).toarray())
        i = -1 if which == "max" else 0
        return float(vals[i]), vecs[:, i]
    Nf = SPDFactor(N, tol=1e-8)
    v0 = np.random.default_rng(12345).standard_normal(n)  # fixed start keeps results reproducible
    op = spla.LinearOperator((n, n), matvec=Nf.solve, dtype=float)
    try:
        if which == "max":
            vals, vecs = spla.eigsh(K, k=1, M=N, Minv=op, which="LA", maxiter=maxiter, tol=1e-10, v0=v0)
            return float(vals[0]), vecs[:, 0]
        # smallest of (K, N) is the reciprocal of the largest of (N, K) when K is SPD;
        # otherwise shift so the pencil is definite
        shift = 0.0
        Kf = None
        try:
            Kf = SPDFactor(K, tol=1e-8)
        except Exception:
            lam_max, _ = generalized_extreme(K, N, "max", maxiter)
            shift = abs(lam_max) + 1.0
            Kf = SPDFactor(K + shift * N, tol=1e-8)
            K = K + shift * N
        kop = spla.LinearOperator((n, n), matvec=Kf.solve, dtype=float)
        vals, vecs = spla.eigsh(N, k=1, M=K, Minv=kop, which="LA", maxiter=maxiter, tol=1e-10, v0=v0)
        return float(1.0 / vals[0] - shift), vecs[:, 0]
    except spla.ArpackNoConvergence as exc:
        raise ConstantsEstimationError(f"eigenvalue iteration did not converge in {maxiter} steps") from exc


def sample_states(model: Discretization, n_samples: int, rng: np.random.Generator, scale: float | None = None):
    """Random free-dof vectors with V0 norms log-spread around ``scale``.

    Amplitudes cover four decades below and above the natural strain scale so
    that both ends of the nonlinearity are probed.
    """
    n = model.n
    if scale is None:
        scale = strain_scale(model)
    out = []
    for k in range(n_samples):
        v = rng.standard_normal(n)
        nv = model.norm(v)
        amp = scale * 10.0 ** rng.uniform(-4.0, 4.0)
        out.append(v * (amp / nv) if nv > 0 else v)
    return out


def strain_sample(model: Discretization, rng: np.random.Generator, low: float = 1e-3, high: float = 0.5) -> np.ndarray:
    """Random free-dof vector whose largest element strain is log-uniform in ``[low, high]``.

    Used for derivative checks, where the nonlinearity should be exercised
    at realistic strain levels.
    """
    v = rng.standard_normal(model.n)
    peak = max((float(np.abs(model.element_strains(v, b)).max()) for b in range(model.dofmap.n_bodies)), default=0.0)
    if peak == 0.0:
        return v
    return v * (10.0 ** rng.uniform(np.log10(low), np.log10(high)) / peak)


def strain_scale(model: Discretization) -> float:
    """V0 norm of a field with unit strain over the whole domain (order of magnitude)."""
    total_area = sum(float(fe.area.sum()) for fe in model.bodies)
    mu = model.problem.mean_mu()
    return math.sqrt(2.0 * mu * total_area)


def balanced_theta(model: Discretization) -> float:
    """Penalty parameter at which the penalty derivative's Lipschitz constant is 1.

    The all-active penalty Hessian scales like ``1/theta``, so this is the
    largest generalised eigenvalue of the ``theta = 1`` Hessian against the
    V0 inner product.  At this value the interface stiffness matches the
    bulk stiffness of the norm (``M_A`` is about 1).
    """
    P = penalty.penalty_hessian_bound(model.traces, model.n, 1.0)
    if P.nnz == 0:
        raise ConstantsEstimationError("problem has no contact pairs")
    return generalized_extreme(P, model.norm_matrix, "max")[0]


def estimate_constants(model: Discretization, theta: float, n_samples: int = 20, seed: int = 0) -> FormConstants:
    """Estimate the continuity/coercivity constants of the forms.

    ``M_A`` and ``B_A`` are extreme generalised eigenvalues of ``A`` against
    the V0 inner product.  ``D`` and ``B`` take, over sampled states ``u``,
    the extreme eigenvalues of ``H''(u)`` and ``A - H''(u)``, so the inner
    supremum over directions is exact.  ``C`` is the smallest sampled margin
    ``1 - 2H(u)/A(u,u)``.  ``D_tilde`` is the largest eigenvalue of the
    all-active penalty Hessian, which bounds every secant of ``J'``.
    Lower bounds are reduced and upper bounds raised by 5 %.
    """
    rng = np.random.default_rng(seed)
    A, N = model.A, model.norm_matrix
    if model.n == 0:
        raise ConstantsEstimationError("problem has no free degrees of freedom")
    lam_max, _ = generalized_extreme(A, N, "max")
    lam_min, _ = generalized_extreme(A, N, "min")
    states = sample_states(model, n_samples, rng)
    nonlinear = any(fe.omega.name != "zero" for fe in model.bodies)
    D_s, B_s, C_s, R_s = 0.0, lam_min, 1.0, 0.0
    if nonlinear:
        for u in states:
            Hs = eval_Hsecond(model, u)
            D_s = max(D_s, generalized_extreme(Hs, N, "max")[0])
            B_s = min(B_s, generalized_extreme((A - Hs).tocsr(), N, "min")[0])
            a = float(u @ (A @ u))
            if a > 0:
                C_s = min(C_s, 1.0 - 2.0 * eval_H(model, u) / a)
            R_s = max(R_s, model.dual_norm(eval_Hprime(model, u)) / max(model.norm(u), 1e-300) * model.norm(u))
    P = penalty.penalty_hessian_bound(model.traces, model.n, theta)
    Dt = generalized_extreme(P, N, "max")[0] if P.nnz else 0.0
    Rt = 0.0
    for u in states:
        Rt = max(Rt, model.dual_norm(penalty.eval_Jprime(model.traces, u, theta)))
    if lam_min <= 0 or B_s <= 0 or C_s <= 0:
        raise ConstantsEstimationError(
            f"non-positive coercivity estimate (B_A={lam_min:.3g}, B={B_s:.3g}, C={C_s:.3g})"
        )
    return FormConstants(
        M_A=1.05 * lam_max,
        B_A=0.95 * lam_min,
        D=1.05 * D_s,
        B=0.95 * B_s,
        C=0.95 * C_s,
        D_tilde=1.05 * Dt,
        R=R_s,
        R_tilde=Rt,
        theta=theta,
    )
