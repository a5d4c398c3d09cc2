"""Mean functions ``g_j(X_i, beta)`` and their Jacobians.

Every model evaluates on stacked subjects: ``X`` has shape ``(..., m, p)``
and ``visits`` shape ``(..., m)``; the mean comes back with shape
``(..., m)`` and the Jacobian with shape ``(..., m, p)``. A single subject
is just the case with no leading axes.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

from .errors import NonFiniteMean

__all__ = [
    "MeanModel",
    "Linear",
    "LogisticRandomIntercept",
    "Custom",
    "evaluate_mean",
    "evaluate_jacobian",
    "fd_step",
]


def fd_step(beta: np.ndarray) -> np.ndarray:
    """Central-difference step, ``eps**(1/3) * max(1, |beta_c|)`` per component."""
    return np.finfo(float).eps ** (1 / 3) * np.maximum(1.0, np.abs(beta))


class MeanModel:
    """Base class. Subclasses implement :meth:`mean` and may override :meth:`jacobian`."""

    is_linear = False
    name = "custom"

    def mean(self, X, beta, visits):
        raise NotImplementedError

    def jacobian(self, X, beta, visits):
        """Central finite differences of :meth:`mean`."""
        beta = np.asarray(beta, dtype=np.float64)
        h = fd_step(beta)
        cols = []
        for c in range(beta.shape[0]):
            e = np.zeros_like(beta)
            e[c] = h[c]
            cols.append((self.mean(X, beta + e, visits) - self.mean(X, beta - e, visits)) / (2 * h[c]))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Linear(MeanModel):
    """``mu_i = X_i beta``; the Jacobian is ``X_i`` itself."""

    is_linear = True
    name = "linear"

    def mean(self, X, beta, visits=None):
        return np.asarray(X) @ np.asarray(beta, dtype=np.float64)

    def jacobian(self, X, beta=None, visits=None):
        return np.asarray(X, dtype=np.float64)


@dataclass(frozen=True)
class LogisticRandomIntercept(MeanModel):
    """Marginal mean of a logistic model with a normal random intercept.

    ``E h(x'beta + sigma * xi)`` with ``xi ~ N(0, 1)`` and ``h`` the
    logistic function, integrated by Gauss-Hermite quadrature. ``sigma`` is
    a fixed input, not estimated.
    """

    sigma: float = 1.0
    quadrature_order: int = 20
    name = "logistic-ri"

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if int(self.quadrature_order) < 1:
            raise ValueError("quadrature_order must be >= 1")

    def _rule(self):
        # E f(xi) = pi^{-1/2} sum_k w_k f(sqrt(2) t_k)
        t, w = hermgauss(int(self.quadrature_order))
        return np.sqrt(2.0) * t, w / np.sqrt(np.pi)

    def _h_and_dh(self, eta):
        nodes, weights = self._rule()
        hk = expit(eta[..., None] + self.sigma * nodes)
        mean = hk @ weights
        dmean = (hk * (1.0 - hk)) @ weights
        return mean, dmean

    def mean(self, X, beta, visits=None):
        eta = np.asarray(X) @ np.asarray(beta, dtype=np.float64)
        return self._h_and_dh(eta)[0]

    def jacobian(self, X, beta, visits=None):
        X = np.asarray(X, dtype=np.float64)
        eta = X @ np.asarray(beta, dtype=np.float64)
        return self._h_and_dh(eta)[1][..., None] * X


@dataclass(frozen=True)
class Custom(MeanModel):
    """User-supplied ``g_j(X_i, beta)``, one callable per visit index ``j``.

    ``derivatives`` optionally maps ``j`` to a callable returning the
    length-``p`` gradient; without it the Jacobian falls back to central
    finite differences.
    """

    functions: Mapping[int, Callable] = field(default_factory=dict)
    derivatives: Mapping[int, Callable] | None = None
    name = "custom"

    def _apply(self, table, X, beta, visits, out_shape):
        X = np.asarray(X, dtype=np.float64)
        visits = np.asarray(visits)
        lead = visits.shape[:-1]
        flatX = X.reshape((-1,) + X.shape[-2:])
        flatV = visits.reshape((-1, visits.shape[-1]))
        out = np.empty((flatV.shape[0], flatV.shape[1]) + out_shape)
        for i in range(flatV.shape[0]):
            for a, j in enumerate(flatV[i]):
                try:
                    fn = table[int(j)]
                except KeyError:
                    raise KeyError(f"no mean function registered for visit {int(j)}") from None
                out[i, a] = fn(flatX[i], beta)
        return out.reshape(lead + (flatV.shape[1],) + out_shape)

    def mean(self, X, beta, visits):
        return self._apply(self.functions, X, np.asarray(beta, dtype=np.float64), visits, ())

    def jacobian(self, X, beta, visits):
        if self.derivatives is None:
            return super().jacobian(X, beta, visits)
        beta = np.asarray(beta, dtype=np.float64)
        return self._apply(self.derivatives, X, beta, visits, (beta.shape[0],))


def evaluate_mean(m: MeanModel, X_i, beta, J_i=None) -> np.ndarray:
    """Mean vector ``(g_j(X_i, beta))_{j in J_i}``."""
    beta = np.asarray(beta, dtype=np.float64)
    X_i = np.asarray(X_i, dtype=np.float64)
    if X_i.shape[-1] != beta.shape[0]:
        raise ValueError(f"X has {X_i.shape[-1]} columns but beta has length {beta.shape[0]}")
    if J_i is None:
        J_i = np.arange(1, X_i.shape[-2] + 1)
    mu = m.mean(X_i, beta, np.asarray(J_i))
    if not np.all(np.isfinite(mu)):
        raise NonFiniteMean(f"mean model {m.name!r} produced non-finite values")
    return mu


def evaluate_jacobian(m: MeanModel, X_i, beta, J_i=None) -> np.ndarray:
    """Matrix of ``d mu_ij / d beta_l``, shape ``(|J_i|, p)``."""
    beta = np.asarray(beta, dtype=np.float64)
    X_i = np.asarray(X_i, dtype=np.float64)
    if J_i is None:
        J_i = np.arange(1, X_i.shape[-2] + 1)
    d = m.jacobian(X_i, beta, np.asarray(J_i))
    if not np.all(np.isfinite(d)):
        raise NonFiniteMean(f"mean model {m.name!r} produced a non-finite Jacobian")
    return d
