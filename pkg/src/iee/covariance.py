"""Method-of-moments covariance estimation and positive-definiteness repair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import CovarianceGrouping, LongitudinalDataset, PartitionDesign, detect_partition
from .errors import IndefiniteCovariance, NoPartition
from .gee import CovarianceSet
from .mean_model import MeanModel

__all__ = [
    "RepairPolicy",
    "CovarianceEstimate",
    "residuals",
    "estimate_componentwise",
    "estimate_matrixwise",
    "matrixwise_by_visit_set",
    "assemble",
    "repair_pd",
]

CLIP = "clip"
ERROR = "error"


@dataclass(frozen=True)
class RepairPolicy:
    """How to treat assembled matrices with eigenvalues below
    ``pd_floor * max(lambda_max, 1)``: clip them up to that floor, or raise."""

    pd_floor: float = 1e-8
    mode: str = CLIP

    def __post_init__(self):
        if not 0 <= self.pd_floor < 1:
            raise ValueError("pd_floor must lie in [0, 1)")
        if self.mode not in (CLIP, ERROR):
            raise ValueError(f"mode must be {CLIP!r} or {ERROR!r}")


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    v: np.ndarray
    assembled: CovarianceSet
    repaired: dict  # subject_id -> bool
    keys: tuple = ()

    def as_dict(self) -> dict:
        return {k: float(x) for k, x in zip(self.keys, self.v)}


def residuals(ds: LongitudinalDataset, model: MeanModel, beta) -> list[np.ndarray]:
    """Block-stacked ``Y_i - mu_i``."""
    beta = np.asarray(beta, dtype=np.float64)
    return [blk.y - model.mean(blk.X, beta, blk.visits) for blk in ds.blocks]


def _floor(w_max, policy):
    return policy.pd_floor * np.maximum(w_max, 1.0)


def repair_pd(V: np.ndarray, policy: RepairPolicy | None = None) -> np.ndarray:
    """Raise small eigenvalues of a symmetric matrix (or stack) to the floor.

    Matrices already above the floor are returned unchanged.
    """
    policy = policy or RepairPolicy()
    out, _ = _repair_stack(np.asarray(V, dtype=np.float64), policy)
    return out


def _repair_stack(V: np.ndarray, policy: RepairPolicy):
    if V.shape[-1] == 0:
        return V, np.zeros(V.shape[:-2], dtype=bool)
    w, Q = np.linalg.eigh(V)
    floor = _floor(w[..., -1], policy)
    bad = w[..., 0] < floor
    if policy.mode == ERROR or not np.any(bad):
        if np.any(bad):
            raise IndefiniteCovariance(
                f"smallest eigenvalue {np.min(w[..., 0]):.3g} below floor"
            )
        return V, bad
    out = np.array(V, copy=True)
    wc = np.maximum(w, floor[..., None])
    fixed = (Q * wc[..., None, :]) @ np.swapaxes(Q, -1, -2)
    fixed = 0.5 * (fixed + np.swapaxes(fixed, -1, -2))
    out[bad] = fixed[bad]
    return out, bad


def assemble(
    ds: LongitudinalDataset,
    g: CovarianceGrouping,
    v: np.ndarray,
    policy: RepairPolicy | None = None,
) -> tuple[CovarianceSet, dict]:
    """Per-subject matrices ``V_i[j, k] = v(j, k, l)`` for ``i`` in ``I(j, k, l)``, then repair."""
    policy = policy or RepairPolicy()
    stacks, repaired = [], {}
    for blk, idx in zip(ds.blocks, g.block_index):
        raw = v[idx]
        try:
            fixed, bad = _repair_stack(raw, policy)
        except IndefiniteCovariance:
            w = np.linalg.eigvalsh(raw)
            r = int(np.argmax(w[:, 0] < _floor(w[:, -1], policy)))
            sid = ds.subjects[blk.positions[r]].subject_id
            raise IndefiniteCovariance(
                f"estimated covariance of subject {sid!r} has eigenvalue {w[r, 0]:.3g} "
                "below the positive-definiteness floor",
                subject=sid,
            ) from None
        stacks.append(fixed)
        for r, pos in enumerate(blk.positions):
            repaired[ds.subjects[pos].subject_id] = bool(bad[r])
    return CovarianceSet(ds, stacks), repaired


def estimate_componentwise(
    ds: LongitudinalDataset,
    g: CovarianceGrouping,
    model: MeanModel,
    beta,
    policy: RepairPolicy | None = None,
) -> CovarianceEstimate:
    """Pool residual cross products over each class ``I(j, k, l)``.

    ``v(j, k, l) = n(j, k, l)^{-1} sum_{i in I(j,k,l)} r_ij r_ik`` with no
    degrees-of-freedom correction.
    """
    g.check(ds)
    R = g.R
    sums = np.zeros(R)
    for blk, idx, r in zip(ds.blocks, g.block_index, residuals(ds, model, beta)):
        a, c = np.triu_indices(blk.m)
        sums += np.bincount(idx[:, a, c].ravel(), weights=(r[:, a] * r[:, c]).ravel(), minlength=R)
    v = sums / g.counts
    V, repaired = assemble(ds, g, v, policy)
    return CovarianceEstimate(v=v, assembled=V, repaired=repaired, keys=g.keys)


def matrixwise_by_visit_set(ds: LongitudinalDataset, model: MeanModel, beta) -> dict:
    """Average outer product ``(Y_i - mu_i)(Y_i - mu_i)'`` per distinct visit set.

    Returns ``{visit_set: (n_l, matrix)}``. Unlike the componentwise
    estimator, a pair shared by several visit sets gets one estimate per set.
    """
    sums: dict = {}
    counts: dict = {}
    for blk, r in zip(ds.blocks, residuals(ds, model, beta)):
        outer = r[:, :, None] * r[:, None, :]
        for row in range(len(blk.positions)):
            key = tuple(int(j) for j in blk.visits[row])
            if key in sums:
                sums[key] = sums[key] + outer[row]
                counts[key] += 1
            else:
                sums[key] = outer[row].copy()
                counts[key] = 1
    return {k: (counts[k], sums[k] / counts[k]) for k in sums}


def estimate_matrixwise(
    ds: LongitudinalDataset,
    part: PartitionDesign | None,
    model: MeanModel,
    beta,
    policy: RepairPolicy | None = None,
) -> CovarianceEstimate:
    """One averaged outer-product matrix per partition block.

    ``v`` lists the upper-triangle entries block by block (label = block
    number, starting at 1), and ``keys`` names them as ``(j, k, l)``.
    """
    if part is None:
        part = detect_partition(ds)
        if part is None:
            raise NoPartition("visit sets overlap; matrix-wise estimation needs disjoint blocks")
    for vs in ds.visit_sets():
        if vs not in part.blocks:
            raise NoPartition(f"visit set {vs} is not a block of the partition")
    per_set = matrixwise_by_visit_set(ds, model, beta)
    keys, vals = [], []
    for l, block in enumerate(part.blocks, start=1):
        if block not in per_set:
            continue
        M = per_set[block][1]
        for a in range(len(block)):
            for c in range(a, len(block)):
                keys.append((block[a], block[c], l))
                vals.append(M[a, c])
    v = np.array(vals)
    policy = policy or RepairPolicy()
    stacks, repaired = [], {}
    for blk in ds.blocks:
        mats = np.stack([per_set[tuple(int(j) for j in vis)][1] for vis in blk.visits])
        mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
        fixed, bad = _repair_stack(mats, policy)
        stacks.append(fixed)
        for r, pos in enumerate(blk.positions):
            repaired[ds.subjects[pos].subject_id] = bool(bad[r])
    return CovarianceEstimate(v=v, assembled=CovarianceSet(ds, stacks), repaired=repaired, keys=tuple(keys))

