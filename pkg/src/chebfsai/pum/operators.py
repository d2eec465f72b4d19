"""Constant-coefficient differential operators and manufactured solutions.

An operator is a dict ``{(a, b): coef}`` meaning ``sum coef d^a/dx^a d^b/dy^b``.
Operators compose by polynomial multiplication, which keeps the boundary
terms of the Nitsche forms (``d_n Lap``, ``d_n Lap^2`` and so on) one-liners.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "IDENTITY",
    "DX",
    "DY",
    "LAPLACE",
    "compose",
    "add",
    "scale",
    "order",
    "directional",
    "AnisotropySpec",
    "ManufacturedSolution",
    "manufactured",
    "polynomial_solution",
]

IDENTITY = {(0, 0): 1.0}
DX = {(1, 0): 1.0}
DY = {(0, 1): 1.0}
LAPLACE = {(2, 0): 1.0, (0, 2): 1.0}


def compose(*ops):
    out = {(0, 0): 1.0}
    for op in ops:
        nxt = {}
        for (a, b), c in out.items():
            for (e, f), d in op.items():
                key = (a + e, b + f)
                nxt[key] = nxt.get(key, 0.0) + c * d
        out = {k: v for k, v in nxt.items() if v != 0.0}
    return out


def add(*ops):
    out = {}
    for op in ops:
        for k, v in op.items():
            out[k] = out.get(k, 0.0) + v
    return {k: v for k, v in out.items() if v != 0.0}


def scale(op, s):
    return {k: s * v for k, v in op.items()}


def order(op):
    return max(a + b for a, b in op)


def directional(v):
    """Derivative along the vector ``v``."""
    out = {}
    if v[0] != 0.0:
        out[(1, 0)] = float(v[0])
    if v[1] != 0.0:
        out[(0, 1)] = float(v[1])
    return out


@dataclass(frozen=True)
class AnisotropySpec:
    """Diffusion tensor ``S = R(theta) diag(kappa, 1) R(theta)^T``.

    ``theta`` is in radians; ``kappa = 1`` gives the identity.
    """

    theta: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.kappa < 1.0:
            raise ValueError("kappa must be >= 1")

    @cached_property
    def matrix(self):
        c, s = np.cos(self.theta), np.sin(self.theta)
        R = np.array([[c, -s], [s, c]])
        return R @ np.diag([self.kappa, 1.0]) @ R.T

    @property
    def operator(self):
        """``trace(S H)`` as an operator dict."""
        S = self.matrix
        return {(2, 0): S[0, 0], (1, 1): 2.0 * S[0, 1], (0, 2): S[1, 1]}

    def conormal(self, n):
        return self.matrix @ np.asarray(n, dtype=float)


def _trig_deriv(kind, k, t):
    # k-th derivative of cos / sin, evaluated at t
    shift = k * np.pi / 2.0
    return np.cos(t + shift) if kind == "cos" else np.sin(t + shift)


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact solution with derivatives, its source term and boundary data.

    ``deriv(a, b, x, y)`` returns ``d^a/dx^a d^b/dy^b u``.  The source is
    ``source_op`` applied to ``u``; ``trace_ops`` maps a boundary normal to
    the operators whose traces define ``g_0, g_1, g_2``.
    """

    deriv: object
    source_op: dict
    name: str = ""
    tensor: np.ndarray = None

    def value(self, x, y):
        return self.deriv(0, 0, x, y)

    def apply(self, op, x, y):
        out = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))
        for (a, b), c in op.items():
            out = out + c * self.deriv(a, b, x, y)
        return out

    def f(self, x, y):
        return self.apply(self.source_op, x, y)

    def g(self, j, normal, x, y):
        """Boundary datum ``g_j`` on an edge with outward ``normal``."""
        if j == 0:
            return self.value(x, y)
        if j == 1:
            n = normal if self.tensor is None else self.tensor @ np.asarray(normal, float)
            return self.apply(directional(n), x, y)
        if j == 2:
            return self.apply(LAPLACE, x, y)
        raise ValueError("boundary datum index must be 0, 1 or 2")


def _trig_solution(deriv_scale=2.0 * np.pi):
    w = deriv_scale

    def deriv(a, b, x, y):
        return w ** (a + b) * _trig_deriv("cos", a, w * np.asarray(x)) * _trig_deriv(
            "sin", b, w * np.asarray(y)
        )

    return deriv


def manufactured(problem, aniso=None):
    """``u = cos(2 pi x) sin(2 pi y)`` with data for ``problem``.

    ``problem`` is ``"biharmonic"``, ``"anisotropic"`` or ``"triharmonic"``.
    """
    deriv = _trig_solution()
    if problem == "biharmonic":
        return ManufacturedSolution(deriv, compose(LAPLACE, LAPLACE), problem)
    if problem == "anisotropic":
        aniso = AnisotropySpec() if aniso is None else aniso
        L = aniso.operator
        return ManufacturedSolution(deriv, compose(L, L), problem, tensor=aniso.matrix)
    if problem == "triharmonic":
        return ManufacturedSolution(deriv, scale(compose(LAPLACE, LAPLACE, LAPLACE), -1.0), problem)
    raise ValueError(f"unknown problem {problem!r}")


def polynomial_solution(coefs, problem="biharmonic", aniso=None):
    """Manufactured solution from monomial coefficients ``{(i, j): c}``."""

    def deriv(a, b, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
        for (i, j), c in coefs.items():
            if i < a or j < b:
                continue
            fa = np.prod(np.arange(i - a + 1, i + 1, dtype=float))
            fb = np.prod(np.arange(j - b + 1, j + 1, dtype=float))
            out = out + c * fa * fb * x ** (i - a) * y ** (j - b)
        return out

    base = manufactured(problem, aniso)
    return ManufacturedSolution(deriv, base.source_op, problem, tensor=base.tensor)
