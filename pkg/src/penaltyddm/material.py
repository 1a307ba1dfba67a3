"""Small-strain kinematics and the deformation-theory stress law.

Stress follows

    sigma_ij = lambda * delta_ij * Theta + 2 mu eps_ij - 2 mu omega(e) e_ij

with volume strain ``Theta``, deviator ``e_ij`` and deformation intensity
``e = sqrt(2 g) / 3``.  Plane strain keeps the 3x3 tensors with
``eps_33 = eps_13 = eps_23 = 0``.

The ``omega`` families shipped here are the ones for which the admissibility
conditions ``0 <= omega <= d(z omega)/dz < 1`` and ``omega' >= 0`` can be
shown by hand; ``omega_rational``'s constant is the hardness knob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tensors are packed as [e11, e22, e33, sqrt(2) e12] so that the Euclidean
# dot product equals the full double contraction a_ij b_ij.
_TRACE_ROW = np.array([1.0, 1.0, 1.0, 0.0])
DEVIATOR = np.eye(4) - np.outer(_TRACE_ROW, _TRACE_ROW) / 3.0
TRACE_ROW = _TRACE_ROW


class OmegaFn:
    """Scalar nonlinearity ``omega(z)`` with derivative and energy density.

    ``energy(z)`` is the closed form of ``int_0^z t omega(t) dt``.
    ``sup_value`` and ``sup_slope`` bound ``omega`` and ``d(z omega)/dz``
    over ``z >= 0``.
    """

    name = "abstract"
    sup_value = 0.0
    sup_slope = 0.0

    @property
    def params(self) -> tuple[float, ...]:
        return ()

    def __call__(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def energy(self, z):
        raise NotImplementedError

    def slope(self, z):
        """``d(z omega(z))/dz``."""
        z = np.asarray(z, dtype=float)
        return self(z) + z * self.deriv(z)

    def spec(self) -> str:
        return " ".join([self.name, *(repr(p) for p in self.params)])

    def __eq__(self, other):
        return isinstance(other, OmegaFn) and (self.name, self.params) == (other.name, other.params)

    def __hash__(self):
        return hash((self.name, self.params))

    def __repr__(self):
        return f"{type(self).__name__}{self.params}"


class OmegaZero(OmegaFn):
    name = "zero"

    def __call__(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def deriv(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def energy(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))


class OmegaConst(OmegaFn):
    name = "const"

    def __init__(self, c: float):
        self.c = float(c)
        self.sup_value = self.c
        self.sup_slope = self.c

    @property
    def params(self):
        return (self.c,)

    def __call__(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.c)

    def deriv(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def energy(self, z):
        z = np.asarray(z, dtype=float)
        return 0.5 * self.c * z * z


class OmegaRational(OmegaFn):
    """``omega(z) = c z / (1 + z)``.

    ``int_0^z t omega(t) dt = c (z^2/2 - z + log(1 + z))``; below ``z = 0.1``
    the alternating series ``c sum_{k>=3} (-1)^(k+1) z^k / k`` is used to
    avoid cancellation.
    """

    name = "rational"
    _SERIES_CUTOFF = 0.1
    _SERIES_TERMS = 24

    def __init__(self, c: float):
        self.c = float(c)
        self.sup_value = self.c
        self.sup_slope = self.c

    @property
    def params(self):
        return (self.c,)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.c * z / (1.0 + z)

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        return self.c / (1.0 + z) ** 2

    def energy(self, z):
        z = np.asarray(z, dtype=float)
        small = z < self._SERIES_CUTOFF
        zs = np.where(small, z, 0.0)
        series = np.zeros_like(zs)
        for k in range(self._SERIES_TERMS + 2, 2, -1):
            series = series + (-1.0) ** (k + 1) * zs**k / k
        zl = np.where(small, 1.0, z)
        closed = 0.5 * zl * zl - zl + np.log1p(zl)
        return self.c * np.where(small, series, closed)


def omega_zero() -> OmegaFn:
    return OmegaZero()


def omega_const(c: float) -> OmegaFn:
    return OmegaConst(c)


def omega_rational(c: float) -> OmegaFn:
    return OmegaRational(c)


_OMEGA_FAMILIES = {"zero": (OmegaZero, 0), "const": (OmegaConst, 1), "rational": (OmegaRational, 1)}


def make_omega(name: str, *params: float) -> OmegaFn:
    try:
        cls, n_params = _OMEGA_FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown omega family {name!r}; expected one of {sorted(_OMEGA_FAMILIES)}")
    if len(params) != n_params:
        raise ValueError(f"omega {name!r} takes {n_params} parameter(s), got {len(params)}")
    return cls(*(float(p) for p in params))


def parse_omega(text: str) -> OmegaFn:
    """Parse ``zero``, ``const:c`` or ``rational:c`` (space separators also accepted)."""
    parts = text.replace(":", " ").split()
    if not parts:
        raise ValueError("empty omega specification")
    return make_omega(parts[0], *parts[1:])


@dataclass(frozen=True, eq=False)
class MaterialModel:
    """Lame parameters (scalar or one value per element) and the nonlinearity."""

    lam: float | np.ndarray
    mu: float | np.ndarray
    omega: OmegaFn

    def __post_init__(self):
        for label, value in (("lambda", self.lam), ("mu", self.mu)):
            arr = np.asarray(value, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
                raise ValueError(f"{label} must be finite and strictly positive, got {value!r}")

    def per_element(self, n_elements: int) -> tuple[np.ndarray, np.ndarray]:
        lam = np.broadcast_to(np.asarray(self.lam, dtype=float), (n_elements,)).copy()
        mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (n_elements,)).copy()
        return lam, mu


@dataclass(frozen=True, eq=False)
class StrainState:
    eps: np.ndarray  # symmetric 3x3

    @property
    def theta(self) -> float:
        return float(np.trace(self.eps))

    @property
    def dev(self) -> np.ndarray:
        return self.eps - np.eye(3) * self.theta / 3.0

    @property
    def g(self) -> float:
        e = self.eps
        return float(
            (e[0, 0] - e[1, 1]) ** 2
            + (e[1, 1] - e[2, 2]) ** 2
            + (e[2, 2] - e[0, 0]) ** 2
            + 6.0 * (e[0, 1] ** 2 + e[1, 2] ** 2 + e[2, 0] ** 2)
        )

    @property
    def intensity(self) -> float:
        return intensity(self)


def shape_gradients(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed areas and constant P1 shape-function gradients.

    ``coords`` has shape ``(m, 3, 2)``; returns ``area (m,)`` and
    ``grads (m, 3, 2)`` with ``grads[e, i] = grad N_i``.
    """
    x = coords[..., 0]
    y = coords[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    grads = np.empty(coords.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv2a = 1.0 / (2.0 * area)
        grads[:, 0, 0] = (y[:, 1] - y[:, 2]) * inv2a
        grads[:, 1, 0] = (y[:, 2] - y[:, 0]) * inv2a
        grads[:, 2, 0] = (y[:, 0] - y[:, 1]) * inv2a
        grads[:, 0, 1] = (x[:, 2] - x[:, 1]) * inv2a
        grads[:, 1, 1] = (x[:, 0] - x[:, 2]) * inv2a
        grads[:, 2, 1] = (x[:, 1] - x[:, 0]) * inv2a
    return area, grads


def strain_operator(grads: np.ndarray) -> np.ndarray:
    """Map element dofs ``[u0x, u0y, u1x, u1y, u2x, u2y]`` to packed strain.

    Returns ``(m, 4, 6)``; rows are ``eps11, eps22, eps33 (= 0), sqrt(2) eps12``.
    """
    m = grads.shape[0]
    B = np.zeros((m, 4, 6))
    r2 = np.sqrt(0.5)
    for i in range(3):
        B[:, 0, 2 * i] = grads[:, i, 0]
        B[:, 1, 2 * i + 1] = grads[:, i, 1]
        B[:, 3, 2 * i] = r2 * grads[:, i, 1]
        B[:, 3, 2 * i + 1] = r2 * grads[:, i, 0]
    return B


def packed_intensity(dev_packed: np.ndarray) -> np.ndarray:
    """``e = sqrt(2 g)/3`` from packed deviators; ``g = 3 e_ij e_ij``."""
    return np.sqrt((2.0 / 3.0) * np.einsum("...i,...i->...", dev_packed, dev_packed))


def element_strain(coords, disp) -> StrainState:
    """Constant strain of one P1 triangle.

    Parameters
    ----------
    coords : (3, 2) array of vertex coordinates, counterclockwise.
    disp : (3, 2) array of vertex displacements.
    """
    coords = np.asarray(coords, dtype=float).reshape(1, 3, 2)
    area, grads = shape_gradients(coords)
    if not area[0] > 0.0:
        raise ValueError(f"degenerate or inverted element (signed area {area[0]:.3g})")
    grad_u = np.asarray(disp, dtype=float).T @ grads[0]  # du_i/dx_j
    eps = np.zeros((3, 3))
    eps[:2, :2] = 0.5 * (grad_u + grad_u.T)
    return StrainState(eps)


def intensity(state: StrainState) -> float:
    return float(np.sqrt(2.0 * max(state.g, 0.0)) / 3.0)


def stress(state: StrainState, material: MaterialModel) -> np.ndarray:
    """Cauchy stress of the deformation-theory law at one point (scalar Lame values)."""
    lam = float(np.ravel(material.lam)[0])
    mu = float(np.ravel(material.mu)[0])
    omega = float(material.omega(intensity(state)))
    return lam * state.theta * np.eye(3) + 2.0 * mu * state.eps - 2.0 * mu * omega * state.dev


@dataclass(frozen=True)
class OmegaReport:
    passed: bool
    first_violation: float | None = None
    condition: str | None = None


def check_omega_admissible(omega: OmegaFn, z_max: float, n_samples: int = 1001) -> OmegaReport:
    """Sample the admissibility inequalities on ``[0, z_max]``.

    Checks ``0 <= omega(z)``, ``omega(z) <= d(z omega)/dz``,
    ``d(z omega)/dz < 1`` and ``omega'(z) >= 0`` using the analytic
    derivative; reports the first failing ``z``.
    """
    if not z_max > 0:
        raise ValueError("z_max must be positive")
    z = np.linspace(0.0, z_max, n_samples)
    w = omega(z)
    slope = omega.slope(z)
    dw = omega.deriv(z)
    checks = (
        ("omega >= 0", w >= 0.0),
        ("omega <= d(z omega)/dz", w <= slope + 1e-15),
        ("d(z omega)/dz < 1", slope < 1.0),
        ("omega' >= 0", dw >= 0.0),
    )
    first = None
    for label, ok in checks:
        bad = np.flatnonzero(~ok)
        if bad.size and (first is None or z[bad[0]] < first[0]):
            first = (float(z[bad[0]]), label)
    if first is None:
        return OmegaReport(True)
    return OmegaReport(False, first[0], first[1])
