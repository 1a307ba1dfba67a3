"""Penalty functional for the contact constraints and the interface forms.

For unilateral pairs the violation at a Gauss point is
``r = d - u_an - u_bn`` and only its negative part ``min(0, r)`` is
penalised; ideal pairs penalise the full mismatch ``u_a - u_b``:

    J(u) = 1/(2 theta) [ sum_S |min(0, r)|^2 + sum_I |u_a - u_b|^2 ]

The interface form ``X`` adds ``(1/theta) psi u_n v_n`` (unilateral) or
``(1/theta) phi u . v`` (ideal) on each side separately, so it never couples
two bodies; this is what lets the subdomain problems be solved independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .dofs import DofMap
from .mesh import IDEAL, UNILATERAL, ContactPair


class Variant(str, Enum):
    NEUMANN = "neumann"
    ROBIN = "robin"
    SUBSET = "subset"
    DIRICHLET_NONSTATIONARY = "dd-nonstationary"


@dataclass(frozen=True)
class CharFnPolicy:
    """How the characteristic functions ``psi`` (unilateral) and ``phi`` (ideal) are chosen.

    ``subset`` switches them on for the pairs whose side-``a`` tag is listed in
    ``tags``; ``masks`` may instead give explicit per-point 0/1 arrays keyed
    by pair index.
    """

    variant: Variant
    tags: tuple[str, ...] = ()
    masks: dict[int, np.ndarray] | None = field(default=None, compare=False)

    @property
    def nonstationary(self) -> bool:
        return self.variant is Variant.DIRICHLET_NONSTATIONARY

    @classmethod
    def parse(cls, text: str) -> "CharFnPolicy":
        text = text.strip()
        if text.startswith("subset:"):
            tags = tuple(t for t in text[len("subset:"):].split(",") if t)
            if not tags:
                raise ValueError("subset policy needs at least one tag")
            return cls(Variant.SUBSET, tags)
        try:
            return cls(Variant(text))
        except ValueError:
            raise ValueError(
                f"unknown policy {text!r}; expected neumann, robin, subset:<tags> or dd-nonstationary"
            ) from None

    def spec(self) -> str:
        if self.variant is Variant.SUBSET:
            return "subset:" + ",".join(self.tags)
        return self.variant.value


NEUMANN_NEUMANN = CharFnPolicy(Variant.NEUMANN)
ROBIN_ROBIN = CharFnPolicy(Variant.ROBIN)
DIRICHLET_DIRICHLET = CharFnPolicy(Variant.DIRICHLET_NONSTATIONARY)


@dataclass(frozen=True)
class PenaltyConfig:
    theta: float
    policy: CharFnPolicy = ROBIN_ROBIN

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"penalty parameter must be positive, got {self.theta!r}")


@dataclass(frozen=True, eq=False)
class PairTraces:
    """Sparse maps from the reduced dof vector to Gauss-point quantities.

    ``na``/``nb``: normal displacement of side a/b (``Q x n``);
    ``va``/``vb``: displacement vectors, stacked ``[x-components; y-components]``
    (``2Q x n``).
    """

    pair: ContactPair
    na: sp.csr_matrix
    nb: sp.csr_matrix
    va: sp.csr_matrix
    vb: sp.csr_matrix

    @property
    def weights(self) -> np.ndarray:
        return self.pair.weights


def build_traces(dofmap: DofMap, pair: ContactPair) -> PairTraces:
    q = pair.n_points
    rows = np.repeat(np.arange(q), 2)

    def trace(body, nodes, shape, normal):
        base = dofmap.full_offsets[body] + 2 * nodes.ravel()
        cols = [base, base + 1]
        mats = []
        for c in range(2):
            mats.append(sp.csr_matrix((shape.ravel(), (rows, cols[c])), shape=(q, dofmap.n_full)))
        free = dofmap.free_dofs
        comp = [m[:, free] for m in mats]
        n_op = sp.diags(normal[:, 0]) @ comp[0] + sp.diags(normal[:, 1]) @ comp[1]
        v_op = sp.vstack(comp)
        return n_op.tocsr(), v_op.tocsr()

    na, va = trace(pair.body_a, pair.a_nodes, pair.a_shape, pair.normal_a)
    nb, vb = trace(pair.body_b, pair.b_nodes, pair.b_shape, pair.normal_b)
    return PairTraces(pair, na, nb, va, vb)


def normal_violation(tr: PairTraces, u: np.ndarray) -> np.ndarray:
    """``d - u_an - u_bn`` at the Gauss points (negative means penetration)."""
    return tr.pair.gap - tr.na @ u - tr.nb @ u


def eval_J(traces, u: np.ndarray, theta: float) -> float:
    total = 0.0
    for tr in traces:
        w = tr.weights
        if tr.pair.kind == UNILATERAL:
            neg = np.minimum(normal_violation(tr, u), 0.0)
            total += float(np.dot(w, neg * neg))
        else:
            jump = (tr.va @ u - tr.vb @ u).reshape(2, -1)
            total += float(np.dot(w, (jump * jump).sum(axis=0)))
    return total / (2.0 * theta)


def eval_Jprime(traces, u: np.ndarray, theta: float) -> np.ndarray:
    """Gradient vector ``j`` with ``j . v = J'(u, v)``."""
    g = np.zeros_like(u, dtype=float)
    for tr in traces:
        w = tr.weights
        if tr.pair.kind == UNILATERAL:
            neg = np.minimum(normal_violation(tr, u), 0.0)
            g -= tr.na.T @ (w * neg) + tr.nb.T @ (w * neg)
        else:
            jump = tr.va @ u - tr.vb @ u
            ww = np.concatenate([w, w])
            g += tr.va.T @ (ww * jump) - tr.vb.T @ (ww * jump)
    return g / theta


def active_set_chi(traces_or_pair: PairTraces, u: np.ndarray) -> np.ndarray:
    """Penetration indicator at the Gauss points of one pair.

    A point with exactly zero violation counts as separated.
    """
    tr = traces_or_pair
    if tr.pair.kind != UNILATERAL:
        return np.zeros(tr.pair.n_points)
    return (normal_violation(tr, u) < 0.0).astype(float)


def characteristic_functions(traces, policy: CharFnPolicy, u: np.ndarray | None = None) -> list[np.ndarray]:
    """Per-pair 0/1 arrays: ``psi`` for unilateral pairs, ``phi`` for ideal ones."""
    out = []
    for i, tr in enumerate(traces):
        q = tr.pair.n_points
        v = policy.variant
        if policy.masks is not None and i in policy.masks:
            vals = np.asarray(policy.masks[i], dtype=float)
            if vals.shape != (q,) or not np.all((vals == 0.0) | (vals == 1.0)):
                raise ValueError(f"mask for pair {i} must be a 0/1 array of length {q}")
        elif v is Variant.NEUMANN:
            vals = np.zeros(q)
        elif v is Variant.ROBIN:
            vals = np.ones(q)
        elif v is Variant.SUBSET:
            vals = np.full(q, 1.0 if tr.pair.tag_a in policy.tags else 0.0)
        elif tr.pair.kind == IDEAL:
            vals = np.ones(q)
        else:
            if u is None:
                raise ValueError("the nonstationary Dirichlet-Dirichlet policy needs the current iterate")
            vals = active_set_chi(tr, u)
        out.append(vals)
    return out


def assemble_X(traces, n: int, theta: float, chars: list[np.ndarray]) -> sp.csr_matrix:
    """Interface form ``X`` for given characteristic values (block diagonal by body)."""
    X = sp.csr_matrix((n, n))
    for tr, c in zip(traces, chars):
        wc = tr.weights * np.asarray(c, dtype=float)
        if not np.any(wc):
            continue
        if tr.pair.kind == UNILATERAL:
            D = sp.diags(wc)
            X = X + tr.na.T @ D @ tr.na + tr.nb.T @ D @ tr.nb
        else:
            D = sp.diags(np.concatenate([wc, wc]))
            X = X + tr.va.T @ D @ tr.va + tr.vb.T @ D @ tr.vb
    return (X / theta).tocsr()


def penalty_hessian_bound(traces, n: int, theta: float) -> sp.csr_matrix:
    """Derivative of ``J'`` with every unilateral point active.

    Every secant ``J'(u + w) - J'(u)`` is bounded by this matrix, which makes
    its largest eigenvalue the Lipschitz constant of ``J'``.
    """
    H = sp.csr_matrix((n, n))
    for tr in traces:
        if tr.pair.kind == UNILATERAL:
            T = tr.na + tr.nb
            H = H + T.T @ sp.diags(tr.weights) @ T
        else:
            T = tr.va - tr.vb
            H = H + T.T @ sp.diags(np.concatenate([tr.weights, tr.weights])) @ T
    return (H / theta).tocsr()
