"""Polynomial smoothers around an s.p.d. preconditioner.

Three smoothers are provided, all written against ``A @ x`` and a
preconditioner exposing ``apply`` (or a plain callable):

* Chebyshev of the first kind on an interval ``[alpha, beta]``, with error
  propagation ``T^_k(MA)``;
* Chebyshev of the fourth kind, which only needs an upper bound ``beta``
  and has error propagation ``W^_k(MA)`` with
  ``W^_k(z) = W_k(1 - 2 z / beta) / (2k + 1)``;
* damped Richardson ``x <- x + omega M (b - A x)``.

The module also evaluates the underlying polynomials, which the tests use
as oracles.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "SmootherKind",
    "SmootherSpec",
    "PolyEval",
    "poly_eval",
    "cheb_T",
    "cheb_W",
    "t_hat",
    "w_hat",
    "mu_sequence",
    "cheb_first_apply",
    "cheb_fourth_apply",
    "richardson_apply",
]


class SmootherKind(str, Enum):
    RICHARDSON = "richardson"
    CHEB_FIRST = "cheb1"
    CHEB_FOURTH = "cheb4"


def _as_apply(M):
    if M is None:
        return lambda r: r.copy()
    if hasattr(M, "apply"):
        return M.apply
    if callable(M):
        return M
    return lambda r: M @ r


@dataclass(frozen=True)
class SmootherSpec:
    """Smoother kind, degree and spectral parameters.

    Parameters
    ----------
    kind : SmootherKind or str
        ``"cheb4"``, ``"cheb1"`` or ``"richardson"``.
    degree : int
        Number of preconditioner applications per call, ``k >= 1``.
    beta : float
        Upper spectral bound of ``MA`` (Chebyshev kinds).
    alpha : float
        Lower end of the interval for the first kind.
    omega : float
        Richardson damping.
    """

    kind: SmootherKind
    degree: int
    beta: float = 1.0
    alpha: float = 0.0
    omega: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SmootherKind(self.kind))
        if self.degree < 1:
            raise ValueError("smoother degree must be >= 1")
        if self.kind is SmootherKind.CHEB_FIRST and not 0.0 < self.alpha < self.beta:
            raise ValueError("first-kind Chebyshev needs 0 < alpha < beta")
        if self.kind is SmootherKind.CHEB_FOURTH and not self.beta > 0.0:
            raise ValueError("fourth-kind Chebyshev needs beta > 0")

    def with_degree(self, k):
        return SmootherSpec(self.kind, k, self.beta, self.alpha, self.omega)

    def apply(self, A, M, b, x0, degree=None):
        k = self.degree if degree is None else degree
        if self.kind is SmootherKind.CHEB_FOURTH:
            return cheb_fourth_apply(A, M, b, x0, self.beta, k)
        if self.kind is SmootherKind.CHEB_FIRST:
            return cheb_first_apply(A, M, b, x0, self.alpha, self.beta, k)
        return richardson_apply(A, M, b, x0, self.omega, k)


# --------------------------------------------------------------------------
# polynomials


def _three_term(k, t, p1):
    t = np.asarray(t, dtype=float)
    prev = np.ones_like(t)
    if k == 0:
        return prev
    cur = p1(t)
    for _ in range(k - 1):
        prev, cur = cur, 2.0 * t * cur - prev
    return cur


def cheb_T(k, t):
    """Chebyshev polynomial of the first kind by recurrence."""
    return _three_term(k, t, lambda t: t.copy())


def cheb_W(k, t):
    """Chebyshev polynomial of the fourth kind (W_1 = 2t + 1)."""
    return _three_term(k, t, lambda t: 2.0 * t + 1.0)


def t_hat(k, alpha, beta, z):
    """T_k((alpha + beta - 2z) / (beta - alpha)) normalised to 1 at z = 0."""
    if not 0.0 < alpha < beta:
        raise ValueError("need 0 < alpha < beta")
    z = np.asarray(z, dtype=float)
    s = beta - alpha
    denom = cheb_T(k, (alpha + beta) / s)
    assert denom != 0.0
    return cheb_T(k, (alpha + beta - 2.0 * z) / s) / denom


def w_hat(k, beta, z):
    """W_k(1 - 2z/beta) / (2k + 1)."""
    if not beta > 0.0:
        raise ValueError("need beta > 0")
    z = np.asarray(z, dtype=float)
    return cheb_W(k, 1.0 - 2.0 * z / beta) / (2 * k + 1)


@dataclass(frozen=True)
class PolyEval:
    """Which polynomial to evaluate: ``"T"``, ``"W"``, ``"T_hat"`` or ``"W_hat"``."""

    kind: str
    degree: int
    alpha: float = 0.0
    beta: float = 1.0


def poly_eval(spec, t):
    if spec.degree < 0:
        raise ValueError("degree must be >= 0")
    if spec.kind == "T":
        return cheb_T(spec.degree, t)
    if spec.kind == "W":
        return cheb_W(spec.degree, t)
    if spec.kind == "T_hat":
        return t_hat(spec.degree, spec.alpha, spec.beta, t)
    if spec.kind == "W_hat":
        return w_hat(spec.degree, spec.beta, t)
    raise ValueError(f"unknown polynomial kind {spec.kind!r}")


def mu_sequence(n, closed_form=True):
    """mu after 0..n updates of the fourth-kind iteration.

    The update ``mu <- 1 / (2 - mu)`` starting from 1/3 has the fixed
    pattern ``(2j + 1) / (2j + 3)``; the closed form is what the smoother
    uses since it is exact to the last bit.
    """
    if closed_form:
        return [(2 * j + 1) / (2 * j + 3) for j in range(n + 1)]
    mu = [1.0 / 3.0]
    for _ in range(n):
        mu.append(1.0 / (2.0 - mu[-1]))
    return mu


# --------------------------------------------------------------------------
# smoothers


def cheb_fourth_apply(A, M, b, x0, beta, k):
    """Fourth-kind Chebyshev smoothing of degree ``k``.

    Parameters
    ----------
    A : operator supporting ``A @ x``
    M : preconditioner (``apply`` method, callable or ``None`` for identity)
    b, x0 : ndarray
    beta : float
        Upper bound of the spectrum of ``MA``.
    k : int

    Returns
    -------
    x : ndarray
    """
    if not beta > 0.0:
        raise ValueError("beta must be positive")
    if k < 1:
        raise ValueError("degree must be >= 1")
    Mx = _as_apply(M)
    d = 4.0 / beta
    x = np.array(x0, dtype=float, copy=True)
    r = b - A @ x
    p = Mx(r)
    mu = 1.0 / 3.0
    x += (d * mu) * p
    for i in range(2, k + 1):
        r = b - A @ x
        p *= mu * mu
        p += Mx(r)
        mu = (2 * i - 1) / (2 * i + 1)
        x += (d * mu) * p
    return x


def cheb_first_apply(A, M, b, x0, alpha, beta, k):
    """First-kind Chebyshev smoothing of degree ``k`` on ``[alpha, beta]``."""
    if not 0.0 < alpha < beta:
        raise ValueError("first-kind Chebyshev needs 0 < alpha < beta")
    if k < 1:
        raise ValueError("degree must be >= 1")
    Mx = _as_apply(M)
    c = 0.5 * (alpha + beta)
    d = 0.5 * (beta - alpha)
    x = np.array(x0, dtype=float, copy=True)
    r = b - A @ x
    p = Mx(r)
    omega = 1.0 / c
    psi = 0.5 * (d * omega) ** 2
    x += omega * p
    for _ in range(2, k + 1):
        r = b - A @ x
        p *= psi
        p += Mx(r)
        omega = 1.0 / (c - psi / omega)
        psi = (0.5 * d * omega) ** 2
        x += omega * p
    return x


def richardson_apply(A, M, b, x0, omega=1.0, k=1):
    """``k`` steps of ``x <- x + omega M (b - A x)``."""
    if k < 1:
        raise ValueError("degree must be >= 1")
    Mx = _as_apply(M)
    x = np.array(x0, dtype=float, copy=True)
    for _ in range(k):
        x += omega * Mx(b - A @ x)
    return x
