"""Bodies, tagged boundaries and contact-interface pairing.

A problem is a list of triangulated bodies.  Every boundary edge carries a tag:

* ``dirichlet`` -- clamped part (``u = 0``), required on every body;
* ``free`` -- zero traction;
* a traction tag -- any tag that appears in a ``traction`` line;
* a contact tag -- any tag that appears in a ``pair`` line.

Interfaces are matched: the node sets of the two sides coincide after
projection, and each 2-point Gauss point on side ``a`` is projected onto side
``b``.  The initial gap is the signed separation ``(P(x) - x) . n_a``; it is
negative where the reference configurations overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .material import MaterialModel, OmegaFn, make_omega, omega_zero, shape_gradients

DIRICHLET = "dirichlet"
FREE = "free"
UNILATERAL = "unilateral"
IDEAL = "ideal"

MATCH_RTOL = 1e-8  # matching tolerance relative to the domain diameter
NORMAL_ATOL = 1e-6  # radians
GAP_SNAP = 1e-12  # gaps below this (relative to the diameter) are round-off and set to 0

_GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


class ProblemFormatError(ValueError):
    """Malformed problem file."""


class ValidationError(ValueError):
    """Structurally invalid mesh or problem."""


class ContactPairError(ValueError):
    """Interfaces that cannot be paired."""


@dataclass(frozen=True, eq=False)
class BodyMesh:
    body_id: int
    nodes: np.ndarray  # (n, 2)
    elements: np.ndarray  # (m, 3) local node indices, counterclockwise
    edges: np.ndarray  # (k, 2) local node indices of tagged boundary edges
    edge_tags: tuple[str, ...]
    node_ids: np.ndarray | None = None  # external ids, for messages and round trips
    element_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.node_ids is None:
            object.__setattr__(self, "node_ids", np.arange(len(self.nodes)))
        if self.element_ids is None:
            object.__setattr__(self, "element_ids", np.arange(len(self.elements)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def element_coords(self) -> np.ndarray:
        return self.nodes[self.elements]

    def tags(self) -> set[str]:
        return set(self.edge_tags)

    def edges_with_tag(self, tag: str) -> np.ndarray:
        sel = [i for i, t in enumerate(self.edge_tags) if t == tag]
        return self.edges[sel].reshape(-1, 2)

    def dirichlet_nodes(self) -> np.ndarray:
        return np.unique(self.edges_with_tag(DIRICHLET))

    def boundary_length(self) -> float:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return float(np.sum(np.hypot(d[:, 0], d[:, 1])))

    def validate(self) -> None:
        area, _ = shape_gradients(self.element_coords())
        bad = np.flatnonzero(~(area > 0.0))
        if bad.size:
            e = bad[0]
            raise ValidationError(
                f"body {self.body_id}: element {self.element_ids[e]} is clockwise or degenerate "
                f"(signed area {area[e]:.3g})"
            )
        owners = _edge_owners(self.elements)
        boundary = {key for key, els in owners.items() if len(els) == 1}
        seen: set[tuple[int, int]] = set()
        for (a, b), tag in zip(self.edges, self.edge_tags):
            key = (min(a, b), max(a, b))
            label = f"{self.node_ids[a]}-{self.node_ids[b]}"
            if key not in owners:
                raise ValidationError(f"body {self.body_id}: tagged edge {label} is not an element edge")
            if len(owners[key]) != 1:
                raise ValidationError(f"body {self.body_id}: tagged edge {label} is interior, not boundary")
            if key in seen:
                raise ValidationError(f"body {self.body_id}: edge {label} tagged twice")
            seen.add(key)
        untagged = sorted(boundary - seen)
        if untagged:
            a, b = untagged[0]
            raise ValidationError(
                f"body {self.body_id}: untagged boundary edge {self.node_ids[a]}-{self.node_ids[b]}"
            )
        if DIRICHLET not in self.edge_tags:
            raise ValidationError(f"body {self.body_id}: Dirichlet part is empty")

    def outer_normals(self, edges: np.ndarray) -> np.ndarray:
        """Unit outer normals of boundary edges ``(k, 2)``."""
        owners = _edge_owners(self.elements)
        normals = np.empty((len(edges), 2))
        for i, (a, b) in enumerate(edges):
            el = owners[(min(a, b), max(a, b))][0]
            centroid = self.nodes[self.elements[el]].mean(axis=0)
            t = self.nodes[b] - self.nodes[a]
            n = np.array([t[1], -t[0]]) / np.hypot(*t)
            if np.dot(n, self.nodes[a] - centroid) < 0.0:
                n = -n
            normals[i] = n
        return normals


def _edge_owners(elements: np.ndarray) -> dict[tuple[int, int], list[int]]:
    owners: dict[tuple[int, int], list[int]] = {}
    for e, tri in enumerate(elements):
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            owners.setdefault((min(a, b), max(a, b)), []).append(e)
    return owners


@dataclass(frozen=True, eq=False)
class Body:
    mesh: BodyMesh
    material: MaterialModel
    body_force: tuple[float, float] = (0.0, 0.0)
    tractions: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def body_id(self) -> int:
        return self.mesh.body_id


@dataclass(frozen=True)
class PairSpec:
    kind: str
    body_a: int  # body ids as written in the problem (1-based)
    tag_a: str
    body_b: int
    tag_b: str


@dataclass(frozen=True, eq=False)
class ContactPair:
    """Quadrature-level description of one interface.

    Arrays are indexed by Gauss point ``q`` on side ``a``.  ``a_nodes[q]`` and
    ``a_shape[q]`` give the edge nodes and linear shape values at ``x_q``;
    ``b_nodes``/``b_shape`` do the same at the partner point ``P(x_q)``.
    ``weights`` integrate over side ``a``.  ``node_map`` pairs every interface
    node of side ``a`` with its partner node on side ``b``.
    """

    kind: str
    body_a: int  # 0-based index into problem.bodies
    body_b: int
    tag_a: str
    tag_b: str
    points_a: np.ndarray
    points_b: np.ndarray
    a_nodes: np.ndarray
    a_shape: np.ndarray
    b_nodes: np.ndarray
    b_shape: np.ndarray
    weights: np.ndarray
    normal_a: np.ndarray
    normal_b: np.ndarray
    gap: np.ndarray
    node_map: np.ndarray  # (n_interface_nodes, 2): [node on a, partner node on b]

    @property
    def n_points(self) -> int:
        return len(self.weights)

    @property
    def length(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class MultiBodyProblem:
    bodies: tuple[Body, ...]
    pair_specs: tuple[PairSpec, ...]
    pairs: tuple[ContactPair, ...]

    @property
    def n_bodies(self) -> int:
        return len(self.bodies)

    def body_index(self, body_id: int) -> int:
        for i, b in enumerate(self.bodies):
            if b.body_id == body_id:
                return i
        raise ValidationError(f"no body with id {body_id}")

    def diameter(self) -> float:
        pts = np.vstack([b.mesh.nodes for b in self.bodies])
        return float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))

    def mean_mu(self) -> float:
        vals = [np.mean(np.asarray(b.material.mu, dtype=float)) for b in self.bodies]
        return float(np.mean(vals))

    def element_size(self) -> float:
        """``sqrt(2 * mean element area)``; equals ``1/n`` on an ``n x n`` block mesh."""
        areas = np.concatenate([shape_gradients(b.mesh.element_coords())[0] for b in self.bodies])
        return float(np.sqrt(2.0 * areas.mean()))

    def compliance_scale(self) -> float:
        """Natural penalty scale ``h / mean(mu)``."""
        return self.element_size() / self.mean_mu()

    def default_theta(self) -> float:
        return 1e-4 * self.compliance_scale()

    def with_omega(self, omega: OmegaFn) -> "MultiBodyProblem":
        bodies = tuple(
            Body(b.mesh, MaterialModel(b.material.lam, b.material.mu, omega), b.body_force, dict(b.tractions))
            for b in self.bodies
        )
        return MultiBodyProblem(bodies, self.pair_specs, self.pairs)


def make_problem(bodies, pair_specs) -> MultiBodyProblem:
    """Validate bodies, build every contact pair and check tag usage."""
    bodies = tuple(sorted(bodies, key=lambda b: b.body_id))
    ids = [b.body_id for b in bodies]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate body ids {ids}")
    for b in bodies:
        b.mesh.validate()
    stub = MultiBodyProblem(bodies, tuple(pair_specs), ())
    contact_tags: dict[int, set[str]] = {b.body_id: set() for b in bodies}
    pairs = []
    for spec in pair_specs:
        if spec.kind not in (UNILATERAL, IDEAL):
            raise ValidationError(f"unknown pair kind {spec.kind!r}")
        for bid, tag in ((spec.body_a, spec.tag_a), (spec.body_b, spec.tag_b)):
            body = bodies[stub.body_index(bid)]
            if tag in (DIRICHLET, FREE) or tag in body.tractions:
                raise ValidationError(f"body {bid}: tag {tag!r} cannot be a contact surface")
            if tag not in body.mesh.tags():
                raise ValidationError(f"body {bid}: pair references tag {tag!r} with no edges")
            contact_tags[bid].add(tag)
        pairs.append(
            build_contact_pair(stub, spec.body_a, spec.body_b, spec.kind, tag_a=spec.tag_a, tag_b=spec.tag_b)
        )
    for b in bodies:
        for tag in b.tractions:
            if tag not in b.mesh.tags():
                raise ValidationError(f"body {b.body_id}: traction on tag {tag!r} with no edges")
            if tag == DIRICHLET or tag in contact_tags[b.body_id]:
                raise ValidationError(f"body {b.body_id}: traction on non-Neumann tag {tag!r}")
        known = {DIRICHLET, FREE} | set(b.tractions) | contact_tags[b.body_id]
        unknown = sorted(b.mesh.tags() - known)
        if unknown:
            raise ValidationError(f"body {b.body_id}: boundary tag {unknown[0]!r} has no role")
    return MultiBodyProblem(bodies, tuple(pair_specs), tuple(pairs))


def _default_tag(kind: str, partner: int) -> str:
    return f"{'s' if kind == UNILATERAL else 'i'}{partner}"


def _project(points, seg_a, seg_b):
    """Closest point on a set of segments; returns (segment, parameter, point, distance)."""
    d = seg_b - seg_a
    rel = points[:, None, :] - seg_a[None, :, :]
    t = np.clip(np.einsum("psk,sk->ps", rel, d) / np.einsum("sk,sk->s", d, d), 0.0, 1.0)
    proj = seg_a[None] + t[..., None] * d[None]
    dist = np.linalg.norm(points[:, None, :] - proj, axis=-1)
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    return k, t[rows, k], proj[rows, k], dist[rows, k]


def build_contact_pair(
    problem: MultiBodyProblem,
    body_a: int,
    body_b: int,
    kind: str,
    tag_a: str | None = None,
    tag_b: str | None = None,
) -> ContactPair:
    """Pair the interface of ``body_a`` with that of ``body_b`` (body ids).

    Default tags are ``s<partner>`` for unilateral and ``i<partner>`` for ideal
    interfaces.  Raises :class:`ContactPairError` when the normals do not
    oppose, a point has no partner within tolerance, or node sets differ.
    """
    if kind not in (UNILATERAL, IDEAL):
        raise ValueError(f"unknown pair kind {kind!r}")
    ia, ib = problem.body_index(body_a), problem.body_index(body_b)
    ma, mb = problem.bodies[ia].mesh, problem.bodies[ib].mesh
    tag_a = tag_a or _default_tag(kind, body_b)
    tag_b = tag_b or _default_tag(kind, body_a)
    ea, eb = ma.edges_with_tag(tag_a), mb.edges_with_tag(tag_b)
    if not len(ea) or not len(eb):
        raise ContactPairError(f"pair {body_a}/{body_b}: empty edge set ({tag_a!r}, {tag_b!r})")
    tol = MATCH_RTOL * problem.diameter()
    na, nb = ma.outer_normals(ea), mb.outer_normals(eb)

    xa0, xa1 = ma.nodes[ea[:, 0]], ma.nodes[ea[:, 1]]
    xb0, xb1 = mb.nodes[eb[:, 0]], mb.nodes[eb[:, 1]]
    lengths = np.linalg.norm(xa1 - xa0, axis=1)

    pts, a_nodes, a_shape, weights, normal_a = [], [], [], [], []
    for xi in _GAUSS2:
        pts.append(xa0 + xi * (xa1 - xa0))
        a_nodes.append(ea)
        a_shape.append(np.column_stack([np.full(len(ea), 1.0 - xi), np.full(len(ea), xi)]))
        weights.append(0.5 * lengths)
        normal_a.append(na)
    order = np.argsort(np.tile(np.arange(len(ea)), 2), kind="stable")
    points_a = np.vstack(pts)[order]
    a_nodes = np.vstack(a_nodes)[order]
    a_shape = np.vstack(a_shape)[order]
    weights = np.concatenate(weights)[order]
    normal_a = np.vstack(normal_a)[order]

    seg, t, points_b, dist = _project(points_a, xb0, xb1)
    normal_b = nb[seg]
    cosang = np.clip(-np.einsum("qk,qk->q", normal_a, normal_b), -1.0, 1.0)
    angle = np.arccos(cosang)
    # arccos loses precision near 1; use the cross product for small angles
    cross = np.abs(normal_a[:, 0] * normal_b[:, 1] - normal_a[:, 1] * normal_b[:, 0])
    angle = np.where(cosang > 0.0, np.arcsin(np.clip(cross, 0.0, 1.0)), angle)
    worst = int(np.argmax(angle))
    if angle[worst] > NORMAL_ATOL:
        raise ContactPairError(
            f"pair {body_a}/{body_b}: normals do not oppose at {points_a[worst].tolist()} "
            f"(angle {angle[worst]:.3g} rad)"
        )
    offset = points_a - points_b
    tangential = offset - np.einsum("qk,qk->q", offset, normal_b)[:, None] * normal_b
    tang = np.linalg.norm(tangential, axis=1)
    worst = int(np.argmax(tang))
    if tang[worst] > tol:
        raise ContactPairError(
            f"pair {body_a}/{body_b}: point {points_a[worst].tolist()} has no partner on {tag_b!r}"
        )
    if kind == IDEAL:
        if np.any(dist > tol):
            q = int(np.argmax(dist))
            raise ContactPairError(
                f"pair {body_a}/{body_b}: ideal interface is open at {points_a[q].tolist()} (distance {dist[q]:.3g})"
            )
        gap = np.zeros(len(dist))
    else:
        # signed distance along the outer normal of side a; negative where the
        # reference configurations overlap (initial interference)
        gap = np.einsum("qk,qk->q", points_b - points_a, normal_a)
        gap[np.abs(gap) <= GAP_SNAP * problem.diameter()] = 0.0
    b_nodes = eb[seg]
    b_shape = np.column_stack([1.0 - t, t])

    node_map = _match_nodes(ma, mb, ea, eb, xb0, xb1, tol, body_a, body_b)
    return ContactPair(
        kind, ia, ib, tag_a, tag_b, points_a, points_b, a_nodes, a_shape, b_nodes, b_shape,
        weights, normal_a, normal_b, gap, node_map,
    )


def _match_nodes(ma, mb, ea, eb, xb0, xb1, tol, body_a, body_b) -> np.ndarray:
    nodes_a = np.unique(ea)
    nodes_b = np.unique(eb)
    if len(nodes_a) != len(nodes_b):
        raise ContactPairError(
            f"pair {body_a}/{body_b}: interfaces have {len(nodes_a)} and {len(nodes_b)} nodes"
        )
    _, _, proj, _ = _project(ma.nodes[nodes_a], xb0, xb1)
    dist = np.linalg.norm(proj[:, None, :] - mb.nodes[nodes_b][None, :, :], axis=-1)
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(nodes_a))
    missing = np.flatnonzero(dist[rows, k] > tol)
    if missing.size:
        i = missing[0]
        raise ContactPairError(
            f"pair {body_a}/{body_b}: node {ma.node_ids[nodes_a[i]]} has no partner node within {tol:.3g}"
        )
    if len(set(k.tolist())) != len(k):
        raise ContactPairError(f"pair {body_a}/{body_b}: node projection is not one-to-one")
    return np.column_stack([nodes_a, nodes_b[k]])


# --------------------------------------------------------------------------
# Text format


def load_problem(path) -> MultiBodyProblem:
    return parse_problem(Path(path).read_text(), source=str(path))


def parse_problem(text: str, source: str = "<string>") -> MultiBodyProblem:
    sections: list[dict] = []
    by_id: dict[int, dict] = {}
    pair_specs: list[PairSpec] = []
    forces: dict[int, tuple[float, float]] = {}
    current = None

    def fail(lineno, msg):
        raise ProblemFormatError(f"{source}:{lineno}: {msg}")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        key, args = words[0], words[1:]
        try:
            if key == "body":
                if len(args) < 7 or args[1] != "lambda" or args[3] != "mu" or args[5] != "omega":
                    fail(lineno, "expected 'body <id> lambda <v> mu <v> omega <name> [params]'")
                bid = int(args[0])
                if bid in by_id:
                    fail(lineno, f"body {bid} declared twice")
                current = {
                    "id": bid, "lam": float(args[2]), "mu": float(args[4]),
                    "omega": make_omega(args[6], *map(float, args[7:])),
                    "nodes": {}, "elements": [], "edges": [], "tractions": {},
                }
                sections.append(current)
                by_id[bid] = current
            elif key == "pair":
                if len(args) != 5:
                    fail(lineno, "expected 'pair <kind> <a> <tagA> <b> <tagB>'")
                pair_specs.append(PairSpec(args[0], int(args[1]), args[2], int(args[3]), args[4]))
            elif key == "bodyforce":
                if len(args) != 3:
                    fail(lineno, "expected 'bodyforce <id> <fx> <fy>'")
                forces[int(args[0])] = (float(args[1]), float(args[2]))
            elif key in ("node", "element", "bedge", "traction"):
                if current is None:
                    fail(lineno, f"'{key}' before any 'body' line")
                if key == "node":
                    if len(args) != 3:
                        fail(lineno, "expected 'node <id> <x> <y>'")
                    nid = int(args[0])
                    if nid in current["nodes"]:
                        fail(lineno, f"node {nid} declared twice")
                    current["nodes"][nid] = (float(args[1]), float(args[2]))
                elif key == "element":
                    if len(args) != 4:
                        fail(lineno, "expected 'element <id> <n1> <n2> <n3>'")
                    current["elements"].append((lineno, int(args[0]), tuple(map(int, args[1:]))))
                elif key == "bedge":
                    if len(args) != 3:
                        fail(lineno, "expected 'bedge <n1> <n2> <tag>'")
                    current["edges"].append((lineno, int(args[0]), int(args[1]), args[2]))
                else:
                    if len(args) != 3:
                        fail(lineno, "expected 'traction <tag> <tx> <ty>'")
                    current["tractions"][args[0]] = (float(args[1]), float(args[2]))
            else:
                fail(lineno, f"unknown keyword {key!r}")
        except ValueError as exc:
            if isinstance(exc, ProblemFormatError):
                raise
            fail(lineno, str(exc))

    if not sections:
        raise ProblemFormatError(f"{source}: no bodies")
    for bid in forces:
        if bid not in by_id:
            raise ProblemFormatError(f"{source}: bodyforce for unknown body {bid}")
    bodies = []
    for sec in sections:
        ids = list(sec["nodes"])
        index = {nid: i for i, nid in enumerate(ids)}
        nodes = np.array([sec["nodes"][n] for n in ids], dtype=float).reshape(-1, 2)

        def local(nid, lineno, _index=index):
            if nid not in _index:
                raise ProblemFormatError(f"{source}:{lineno}: unknown node {nid} in body {sec['id']}")
            return _index[nid]

        elements = np.array(
            [[local(n, ln) for n in tri] for ln, _, tri in sec["elements"]], dtype=np.int64
        ).reshape(-1, 3)
        element_ids = np.array([eid for _, eid, _ in sec["elements"]], dtype=np.int64)
        edges = np.array([[local(a, ln), local(b, ln)] for ln, a, b, _ in sec["edges"]], dtype=np.int64).reshape(-1, 2)
        tags = tuple(t for *_, t in sec["edges"])
        mesh = BodyMesh(sec["id"], nodes, elements, edges, tags, np.array(ids, dtype=np.int64), element_ids)
        material = MaterialModel(sec["lam"], sec["mu"], sec["omega"])
        bodies.append(Body(mesh, material, forces.get(sec["id"], (0.0, 0.0)), sec["tractions"]))
    return make_problem(bodies, pair_specs)


def format_problem(problem: MultiBodyProblem) -> str:
    lines = ["# multibody contact problem"]
    for b in problem.bodies:
        m, mat = b.mesh, b.material
        if np.ndim(mat.lam) or np.ndim(mat.mu):
            raise ValueError("the text format stores one lambda/mu per body")
        lines.append(
            f"body {m.body_id} lambda {float(mat.lam)!r} mu {float(mat.mu)!r} omega {mat.omega.spec()}"
        )
        for nid, (x, y) in zip(m.node_ids, m.nodes):
            lines.append(f"node {nid} {float(x)!r} {float(y)!r}")
        for eid, tri in zip(m.element_ids, m.elements):
            lines.append("element {} {} {} {}".format(eid, *m.node_ids[tri]))
        for (a, b_), tag in zip(m.edges, m.edge_tags):
            lines.append(f"bedge {m.node_ids[a]} {m.node_ids[b_]} {tag}")
        for tag, (tx, ty) in b.tractions.items():
            lines.append(f"traction {tag} {float(tx)!r} {float(ty)!r}")
    for b in problem.bodies:
        if any(b.body_force):
            fx, fy = b.body_force
            lines.append(f"bodyforce {b.body_id} {float(fx)!r} {float(fy)!r}")
    for s in problem.pair_specs:
        lines.append(f"pair {s.kind} {s.body_a} {s.tag_a} {s.body_b} {s.tag_b}")
    return "\n".join(lines) + "\n"


def save_problem(problem: MultiBodyProblem, path) -> None:
    Path(path).write_text(format_problem(problem))


# --------------------------------------------------------------------------
# Generators


def _grid_block(n: int, x0: float, y0: float, width: float, height: float, nx: int | None = None):
    """Structured triangulation of a rectangle with ``nx x n`` cells."""
    nx = n if nx is None else nx
    xs = x0 + width * np.arange(nx + 1) / nx
    ys = y0 + height * np.arange(n + 1) / n
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    elements = []
    for j in range(n):
        for i in range(nx):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            elements += [(a, b, c), (a, c, d)]
    sides = {
        "bottom": [(nid(i, 0), nid(i + 1, 0)) for i in range(nx)],
        "right": [(nid(nx, j), nid(nx, j + 1)) for j in range(n)],
        "top": [(nid(i + 1, n), nid(i, n)) for i in range(nx)],
        "left": [(nid(0, j + 1), nid(0, j)) for j in range(n)],
    }
    return nodes, np.array(elements, dtype=np.int64), sides


def _mesh_from_sides(body_id, nodes, elements, sides, side_tags) -> BodyMesh:
    edges, tags = [], []
    for side in ("bottom", "right", "top", "left"):
        for e in sides[side]:
            edges.append(e)
            tags.append(side_tags[side])
    return BodyMesh(body_id, nodes, elements, np.array(edges, dtype=np.int64), tuple(tags))


def generate_stacked_blocks(
    n_bodies: int,
    elements_per_side: int,
    gap0: float = 0.0,
    load: float = 0.0,
    lam: float = 1000.0,
    mu: float = 1000.0,
    omega: OmegaFn | None = None,
) -> MultiBodyProblem:
    """Unit blocks stacked vertically with unilateral interfaces.

    The bottom block is clamped on its lower edge and the top block hangs
    from its clamped upper edge; a middle block (``n_bodies == 3``) is clamped
    on both lateral sides.  Every block above the bottom one carries a
    downward volume force ``load`` per unit height, i.e. its weight per unit
    width equals ``load``.  Adjacent blocks are separated by ``gap0``; a
    negative value overlaps them (initial interference), which loads the
    stack through the contact penalty alone.
    Lateral sides are otherwise traction free.
    """
    if n_bodies not in (2, 3):
        raise ValueError("n_bodies must be 2 or 3")
    if int(elements_per_side) < 1:
        raise ValueError("elements_per_side must be >= 1")
    if not gap0 > -1.0:
        raise ValueError("gap0 must exceed -1 (blocks would overlap completely)")
    n = int(elements_per_side)
    omega = omega or omega_zero()
    bodies, specs = [], []
    for k in range(n_bodies):
        bid = k + 1
        nodes, elements, sides = _grid_block(n, 0.0, k * (1.0 + gap0), 1.0, 1.0)
        tags = {"bottom": FREE, "right": FREE, "top": FREE, "left": FREE}
        if k == 0:
            tags["bottom"] = DIRICHLET
        else:
            tags["bottom"] = _default_tag(UNILATERAL, bid - 1)
        if k == n_bodies - 1:
            tags["top"] = DIRICHLET
        else:
            tags["top"] = _default_tag(UNILATERAL, bid + 1)
        if 0 < k < n_bodies - 1:
            tags["left"] = tags["right"] = DIRICHLET
        mesh = _mesh_from_sides(bid, nodes, elements, sides, tags)
        force = (0.0, -float(load)) if k > 0 else (0.0, 0.0)
        bodies.append(Body(mesh, MaterialModel(lam, mu, omega), force, {}))
        if k > 0:
            specs.append(PairSpec(UNILATERAL, bid - 1, _default_tag(UNILATERAL, bid), bid, _default_tag(UNILATERAL, bid - 1)))
    return make_problem(bodies, specs)


def generate_split_body(
    elements_per_side: int,
    load: float = 0.0,
    lam: float = 1000.0,
    mu: float = 1000.0,
    omega: OmegaFn | None = None,
    split: bool = True,
) -> MultiBodyProblem:
    """Unit square clamped at the bottom with traction ``(load/4, -load)`` on top.

    With ``split=True`` the square is cut at ``x = 1/2`` into two bodies joined
    by an ideal interface; otherwise the same mesh is returned as one body.
    """
    n = int(elements_per_side)
    if n < 2 or n % 2:
        raise ValueError("elements_per_side must be an even integer >= 2")
    omega = omega or omega_zero()
    traction = {"top": (0.25 * float(load), -float(load))}
    if not split:
        nodes, elements, sides = _grid_block(n, 0.0, 0.0, 1.0, 1.0)
        tags = {"bottom": DIRICHLET, "right": FREE, "top": "top", "left": FREE}
        mesh = _mesh_from_sides(1, nodes, elements, sides, tags)
        return make_problem([Body(mesh, MaterialModel(lam, mu, omega), (0.0, 0.0), traction)], [])
    half = n // 2
    bodies = []
    for k, x0 in enumerate((0.0, 0.5)):
        bid = k + 1
        nodes, elements, sides = _grid_block(n, x0, 0.0, 0.5, 1.0, nx=half)
        tags = {"bottom": DIRICHLET, "top": "top", "left": FREE, "right": FREE}
        if k == 0:
            tags["right"] = _default_tag(IDEAL, 2)
        else:
            tags["left"] = _default_tag(IDEAL, 1)
        mesh = _mesh_from_sides(bid, nodes, elements, sides, tags)
        bodies.append(Body(mesh, MaterialModel(lam, mu, omega), (0.0, 0.0), dict(traction)))
    spec = PairSpec(IDEAL, 1, _default_tag(IDEAL, 2), 2, _default_tag(IDEAL, 1))
    return make_problem(bodies, [spec])
