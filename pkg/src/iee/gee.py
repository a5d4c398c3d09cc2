"""Estimating-equation solver for ``beta`` given working covariances.

All per-subject work is done on the dataset's size blocks: every ``V_i`` in
a block is Cholesky-factorized at once and the responses and Jacobians are
whitened, so ``mu_i' V_i^{-1} mu_i`` becomes a plain cross product. The
block contributions are then summed in a fixed order.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataset import LongitudinalDataset
from .errors import (
    IndefiniteCovariance,
    NewtonDiverged,
    NewtonSingular,
    NonFiniteMean,
    SingularInformation,
)
from .mean_model import Linear, MeanModel

__all__ = [
    "CovarianceSet",
    "GeeOptions",
    "solve_gee",
    "blue_linear",
    "ols_linear",
    "model_based_covariance",
    "information",
    "estimating_function",
]


class CovarianceSet:
    """Per-subject covariance matrices, stored block-stacked like the dataset.

    Index by subject id to get one matrix. ``stacks[b]`` has shape
    ``(n_m, m, m)`` for dataset block ``b``.
    """

    __slots__ = ("stacks", "_ds")

    def __init__(self, ds: LongitudinalDataset, stacks: Sequence[np.ndarray]):
        stacks = tuple(np.asarray(s, dtype=np.float64) for s in stacks)
        if len(stacks) != len(ds.blocks):
            raise ValueError("covariance stacks do not match the dataset blocks")
        for blk, st in zip(ds.blocks, stacks):
            if st.shape != (len(blk.positions), blk.m, blk.m):
                raise ValueError(
                    f"covariance stack of shape {st.shape} for block of "
                    f"{len(blk.positions)} subjects with {blk.m} visits"
                )
            if not np.array_equal(st, np.swapaxes(st, -1, -2)):
                raise ValueError("covariance matrices must be exactly symmetric")
        self.stacks = stacks
        self._ds = ds

    @classmethod
    def from_matrices(cls, ds: LongitudinalDataset, matrices) -> CovarianceSet:
        """From a mapping ``subject_id -> V_i`` or a sequence in dataset order."""
        if isinstance(matrices, Mapping):
            get = lambda pos: matrices[ds.subjects[pos].subject_id]  # noqa: E731
        else:
            matrices = list(matrices)
            if len(matrices) != ds.n:
                raise ValueError(f"{len(matrices)} matrices for {ds.n} subjects")
            get = lambda pos: matrices[pos]  # noqa: E731
        return cls(ds, [np.stack([np.asarray(get(p), float) for p in blk.positions]) for blk in ds.blocks])

    @classmethod
    def identity(cls, ds: LongitudinalDataset) -> CovarianceSet:
        return cls(ds, [np.broadcast_to(np.eye(blk.m), (len(blk.positions), blk.m, blk.m)).copy() for blk in ds.blocks])

    def __getitem__(self, subject_id) -> np.ndarray:
        bi, r = self._ds.locator[subject_id]
        return self.stacks[bi][r]

    def matrices(self) -> list[np.ndarray]:
        """All matrices in dataset subject order."""
        out = [None] * self._ds.n
        for blk, st in zip(self._ds.blocks, self.stacks):
            for r, pos in enumerate(blk.positions):
                out[pos] = st[r]
        return out

    def scaled(self, c: float) -> CovarianceSet:
        return CovarianceSet(self._ds, [c * s for s in self.stacks])

    def cholesky(self) -> list[np.ndarray]:
        out = []
        for blk, st in zip(self._ds.blocks, self.stacks):
            try:
                out.append(np.linalg.cholesky(st))
            except np.linalg.LinAlgError:
                bad = next(r for r in range(st.shape[0]) if np.linalg.eigvalsh(st[r])[0] <= 0)
                sid = self._ds.subjects[blk.positions[bad]].subject_id
                raise IndefiniteCovariance(
                    f"covariance of subject {sid!r} is not positive definite", subject=sid
                ) from None
        return out


@dataclass(frozen=True)
class GeeOptions:
    max_newton_iters: int = 50
    beta_tol: float = 1e-10
    ridge: float = 0.0

    def __post_init__(self):
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if not self.beta_tol > 0:
            raise ValueError("beta_tol must be > 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


def _whitened(ds, model, beta, chols):
    """Yield whitened Jacobian and residual per block: ``L^{-1} mu_dot``, ``L^{-1}(Y - mu)``."""
    for blk, L in zip(ds.blocks, chols):
        mu = model.mean(blk.X, beta, blk.visits)
        D = model.jacobian(blk.X, beta, blk.visits)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(D))):
            raise NonFiniteMean(f"mean model {model.name!r} produced non-finite values")
        r = (blk.y - mu)[..., None]
        yield np.linalg.solve(L, D), np.linalg.solve(L, r)[..., 0]


def _accumulate(ds, model, beta, chols, with_score=True):
    p = ds.p
    info = np.zeros((p, p))
    score = np.zeros(p)
    for Dw, rw in _whitened(ds, model, beta, chols):
        info += np.einsum("nap,naq->pq", Dw, Dw)
        if with_score:
            score += np.einsum("nap,na->p", Dw, rw)
    return 0.5 * (info + info.T), score


def information(ds: LongitudinalDataset, model: MeanModel, beta, V: CovarianceSet) -> np.ndarray:
    """``sum_i mu_dot_i' V_i^{-1} mu_dot_i``."""
    beta = np.zeros(ds.p) if beta is None else np.asarray(beta, dtype=np.float64)
    return _accumulate(ds, model, beta, V.cholesky(), with_score=False)[0]


def estimating_function(ds: LongitudinalDataset, model: MeanModel, beta, V: CovarianceSet) -> np.ndarray:
    """``sum_i mu_dot_i' V_i^{-1} (Y_i - mu_i)``; zero at the GEE solution."""
    return _accumulate(ds, model, np.asarray(beta, dtype=np.float64), V.cholesky())[1]


def _spd_factor(A: np.ndarray):
    """Cholesky factor of a symmetric matrix, or None if it is numerically singular."""
    try:
        c = cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        return None
    d = np.abs(np.diag(c[0]))
    if d.min() == 0 or (d.min() / d.max()) ** 2 < np.finfo(float).eps * A.shape[0]:
        return None
    return c


def _solve_info(info, rhs):
    c = _spd_factor(info)
    if c is None:
        raise SingularInformation("information matrix is singular")
    return cho_solve(c, rhs)


def blue_linear(ds: LongitudinalDataset, V: CovarianceSet) -> np.ndarray:
    """Weighted least squares ``(sum X'V^{-1}X)^{-1} sum X'V^{-1}Y``."""
    info, score = _accumulate(ds, Linear(), np.zeros(ds.p), V.cholesky())
    return _solve_info(info, score)


def ols_linear(ds: LongitudinalDataset) -> np.ndarray:
    """Ordinary least squares: :func:`blue_linear` with identity covariances."""
    return blue_linear(ds, CovarianceSet.identity(ds))


def solve_gee(
    ds: LongitudinalDataset,
    model: MeanModel,
    V: CovarianceSet,
    beta0=None,
    opts: GeeOptions | None = None,
) -> np.ndarray:
    """Solve ``sum_i mu_dot_i' V_i^{-1} (Y_i - mu_i) = 0`` for ``beta``.

    Gauss-Newton (Fisher scoring) steps using first derivatives only.
    Linear models go straight to the closed form.

    Raises
    ------
    NewtonSingular
        The information matrix is singular and ``opts.ridge`` is zero.
    NewtonDiverged
        No step below ``opts.beta_tol`` within ``opts.max_newton_iters``.
    """
    opts = opts or GeeOptions()
    if model.is_linear:
        try:
            return blue_linear(ds, V)
        except SingularInformation as exc:
            if opts.ridge == 0:
                raise NewtonSingular(str(exc), last_beta=beta0) from None
            info, score = _accumulate(ds, model, np.zeros(ds.p), V.cholesky())
            return _solve_info(info + opts.ridge * np.eye(ds.p), score)

    beta = np.zeros(ds.p) if beta0 is None else np.array(beta0, dtype=np.float64)
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta0 must be finite")
    chols = V.cholesky()
    for _ in range(opts.max_newton_iters):
        info, score = _accumulate(ds, model, beta, chols)
        c = _spd_factor(info)
        if c is None:
            if opts.ridge == 0:
                raise NewtonSingular("information matrix is singular", last_beta=beta.copy())
            c = _spd_factor(info + opts.ridge * np.eye(ds.p))
            if c is None:
                raise NewtonSingular("information matrix is singular after ridge", last_beta=beta.copy())
        step = cho_solve(c, score)
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise NewtonDiverged("Gauss-Newton iterate became non-finite", last_beta=beta - step)
        if np.max(np.abs(step)) < opts.beta_tol:
            return beta
    raise NewtonDiverged(
        f"Gauss-Newton did not converge in {opts.max_newton_iters} steps", last_beta=beta
    )


def model_based_covariance(ds: LongitudinalDataset, model: MeanModel, beta, V: CovarianceSet) -> np.ndarray:
    """``(sum_i mu_dot_i' V_i^{-1} mu_dot_i)^{-1}`` at ``beta``.

    Square roots of the diagonal are the model-based standard errors.
    """
    info = information(ds, model, beta, V)
    cov = _solve_info(info, np.eye(ds.p))
    return 0.5 * (cov + cov.T)
