"""Degree-of-freedom bookkeeping for the product space of all bodies.

Every body owns two displacement components per node.  The *full* numbering
concatenates bodies in order with ``2 * node + component`` inside each body;
the *reduced* numbering keeps only dofs that are not on a Dirichlet edge.
Reduced dofs stay grouped by body, so each body occupies one contiguous slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class DofMap:
    full_offsets: np.ndarray  # (N+1,) start of each body in the full numbering
    free_dofs: np.ndarray  # reduced index -> full index
    full_to_free: np.ndarray  # full index -> reduced index, -1 if constrained
    body_slices: tuple[slice, ...]

    @classmethod
    def build(cls, n_nodes: list[int], constrained_nodes: list[np.ndarray]) -> "DofMap":
        offsets = np.concatenate([[0], np.cumsum([2 * n for n in n_nodes])]).astype(np.int64)
        mask = np.ones(offsets[-1], dtype=bool)
        for b, nodes in enumerate(constrained_nodes):
            nodes = np.asarray(nodes, dtype=np.int64)
            mask[offsets[b] + 2 * nodes] = False
            mask[offsets[b] + 2 * nodes + 1] = False
        free = np.flatnonzero(mask)
        full_to_free = -np.ones(offsets[-1], dtype=np.int64)
        full_to_free[free] = np.arange(free.size)
        slices = []
        for b in range(len(n_nodes)):
            lo = np.searchsorted(free, offsets[b])
            hi = np.searchsorted(free, offsets[b + 1])
            slices.append(slice(int(lo), int(hi)))
        return cls(offsets, free, full_to_free, tuple(slices))

    @property
    def n_bodies(self) -> int:
        return len(self.body_slices)

    @property
    def n_full(self) -> int:
        return int(self.full_offsets[-1])

    @property
    def n_free(self) -> int:
        return int(self.free_dofs.size)

    def body_of_free(self) -> np.ndarray:
        out = np.empty(self.n_free, dtype=np.int64)
        for b, s in enumerate(self.body_slices):
            out[s] = b
        return out

    def expand(self, u: np.ndarray) -> np.ndarray:
        """Reduced vector -> full vector with zeros on constrained dofs."""
        full = np.zeros(self.n_full)
        full[self.free_dofs] = u
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free_dofs]

    def body_nodal(self, u: np.ndarray, body: int) -> np.ndarray:
        """Nodal ``(n_nodes, 2)`` displacement array of one body."""
        full = self.expand(u)
        lo, hi = self.full_offsets[body], self.full_offsets[body + 1]
        return full[lo:hi].reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class DisplacementState:
    """An iterate: reduced global vector plus the map that interprets it."""

    values: np.ndarray
    dofmap: DofMap

    def __post_init__(self):
        if self.values.shape != (self.dofmap.n_free,):
            raise ValueError(
                f"state has {self.values.shape} entries, dof map expects {self.dofmap.n_free}"
            )

    def body(self, alpha: int) -> np.ndarray:
        return self.dofmap.body_nodal(self.values, alpha)

    def nodal(self) -> list[np.ndarray]:
        return [self.body(b) for b in range(self.dofmap.n_bodies)]
