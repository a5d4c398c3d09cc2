"""Iterative estimating equations: alternate the GEE solve and the moment update.

Outer iteration ``m`` computes ``beta_m = beta(v_{m-1})`` followed by
``v_m = v(beta_m)``, starting from ``v_0`` with unit variances and zero
covariances (identity working matrices), so ``beta_1`` is the
identity-weighted fit and ``beta_2`` is the one-step estimator. The run
stops at the first ``m >= 2`` with
``max|beta_m - beta_{m-1}| + max|v_m - v_{m-1}| < conv_tol``.

The trace holds one entry per outer iteration ``m = 1, 2, ...``. The
identity-weighted iteration is the starting point, so a run that stops at
iteration ``m`` took ``m - 1`` steps and its trace has ``steps + 1``
entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import RepairPolicy, assemble, estimate_componentwise
from .dataset import CovarianceGrouping, LongitudinalDataset
from .errors import IEEError, NotConverged
from .gee import CovarianceSet, GeeOptions, model_based_covariance, solve_gee
from .mean_model import MeanModel

__all__ = [
    "IeeOptions",
    "TraceEntry",
    "FitResult",
    "fit_iee",
    "one_step_fit",
    "convergence_rate_diagnostic",
]


@dataclass(frozen=True)
class IeeOptions:
    conv_tol: float = 1e-4
    max_outer_iters: int = 100
    one_step_only: bool = False
    gee: GeeOptions = field(default_factory=GeeOptions)
    repair: RepairPolicy = field(default_factory=RepairPolicy)
    beta_start: tuple | None = None  # Gauss-Newton start for nonlinear means

    def __post_init__(self):
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be > 0")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class TraceEntry:
    iteration: int
    beta: np.ndarray
    v: np.ndarray
    criterion: float | None  # None on the first iteration


@dataclass(frozen=True, eq=False)
class FitResult:
    beta_hat: np.ndarray
    v_hat: np.ndarray
    covariance_set: CovarianceSet
    beta_cov: np.ndarray | None
    trace: tuple[TraceEntry, ...]
    steps_to_converge: int | None
    rate_estimate: float | None
    keys: tuple
    coef_names: tuple[str, ...]
    v_start: np.ndarray | None = None
    method: str = "iee"
    conv_tol: float = 1e-4
    repaired: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.steps_to_converge is not None

    @property
    def std_errors(self) -> np.ndarray | None:
        if self.beta_cov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.beta_cov), 0.0, None))

    def half_steps(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """The interleaved sequence ``(beta^(k), v^(k))``, ``k = 1, 2, ...``.

        Odd ``k`` updates beta with v held, even ``k`` updates v with beta
        held, so ``beta^(2m-1) = beta_m`` and ``v^(2m) = v_m``.
        """
        out = []
        v_prev = self.v_start
        for e in self.trace:
            out.append((e.beta, v_prev))
            out.append((e.beta, e.v))
            v_prev = e.v
        return out

    def to_dict(self, include_trace: bool = False) -> dict:
        se = self.std_errors
        doc = {
            "kind": "fit_result",
            "method": self.method,
            "coefficients": list(self.coef_names),
            "beta": [float(x) for x in self.beta_hat],
            "std_errors": None if se is None else [float(x) for x in se],
            "beta_cov": None if self.beta_cov is None else [[float(x) for x in row] for row in self.beta_cov],
            "v": {_key_str(k): float(x) for k, x in zip(self.keys, self.v_hat)},
            "converged": self.converged,
            "steps": self.steps_to_converge,
            "iterations": len(self.trace),
            "final_criterion": _num(self.trace[-1].criterion),
            "conv_tol": self.conv_tol,
            "rate_estimate": _num(self.rate_estimate),
            "repaired_subjects": sum(bool(x) for x in self.repaired.values()),
        }
        if include_trace:
            doc["trace"] = [
                {
                    "iteration": e.iteration,
                    "beta": [float(x) for x in e.beta],
                    "v": [float(x) for x in e.v],
                    "criterion": _num(e.criterion),
                }
                for e in self.trace
            ]
        return doc


def _key_str(k) -> str:
    return ",".join(str(x) for x in k)


def _num(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return float(x)


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _iterate(ds, model, g, opts, max_iters):
    """Run up to ``max_iters`` outer iterations; return trace and final state."""
    g.check(ds)
    v = g.identity_vector()
    V, _ = assemble(ds, g, v, opts.repair)
    trace = []
    beta_prev = None
    beta_start = None if opts.beta_start is None else np.asarray(opts.beta_start, float)
    state = None
    for m in range(1, max_iters + 1):
        try:
            beta = solve_gee(ds, model, V, beta_prev if beta_prev is not None else beta_start, opts.gee)
            est = estimate_componentwise(ds, g, model, beta, opts.repair)
        except IEEError as exc:
            exc.iteration = m
            raise
        crit = None
        if beta_prev is not None:
            crit = _max_abs(beta, beta_prev) + _max_abs(est.v, v)
        trace.append(TraceEntry(m, beta, est.v, crit))
        state = (beta, V, est)
        beta_prev, v, V = beta, est.v, est.assembled
        if crit is not None and crit < opts.conv_tol:
            return trace, state, m - 1
    return trace, state, None


def _result(ds, model, g, trace, beta, v_hat, V_hat, steps, method, opts, repaired):
    try:
        cov = model_based_covariance(ds, model, beta, V_hat)
    except IEEError:
        cov = None
    return FitResult(
        beta_hat=beta,
        v_hat=v_hat,
        covariance_set=V_hat,
        beta_cov=cov,
        trace=tuple(trace),
        steps_to_converge=steps,
        rate_estimate=convergence_rate_diagnostic(trace),
        keys=g.keys,
        coef_names=ds.covariate_names,
        v_start=g.identity_vector(),
        method=method,
        conv_tol=opts.conv_tol,
        repaired=repaired,
    )


def fit_iee(
    ds: LongitudinalDataset,
    model: MeanModel,
    g: CovarianceGrouping,
    opts: IeeOptions | None = None,
) -> FitResult:
    """Iterate to the fixed point ``beta = beta(v)``, ``v = v(beta)``.

    Raises
    ------
    NotConverged
        The criterion stayed above ``conv_tol`` for ``max_outer_iters``
        iterations; ``exc.result`` carries the unconverged fit and trace.
    """
    opts = opts or IeeOptions()
    if opts.one_step_only:
        return one_step_fit(ds, model, g, opts)
    trace, (beta, _, est), steps = _iterate(ds, model, g, opts, opts.max_outer_iters)
    res = _result(ds, model, g, trace, beta, est.v, est.assembled, steps, "iee", opts, est.repaired)
    if steps is None:
        last = trace[-1].criterion
        raise NotConverged(
            f"no convergence in {opts.max_outer_iters} outer iterations"
            + ("" if last is None else f" (last criterion {last:.3g})"),
            result=res,
        )
    return res


def one_step_fit(
    ds: LongitudinalDataset,
    model: MeanModel,
    g: CovarianceGrouping,
    opts: IeeOptions | None = None,
) -> FitResult:
    """Identity-weighted fit, one moment update, one refit.

    The returned ``beta_hat`` is ``beta_2`` of the full iteration;
    ``v_hat`` and the standard errors use the covariances it was
    weighted with, ``v(beta_1)``.
    """
    opts = opts or IeeOptions()
    trace, (beta, V_used, _), _ = _iterate(ds, model, g, opts, 2)
    v_used = trace[0].v
    return _result(ds, model, g, trace, beta, v_used, V_used, 1, "one_step", opts, {})


def convergence_rate_diagnostic(trace, K: int = 3) -> float | None:
    """Geometric mean of the last ``K`` successive-difference ratios of beta.

    ``||beta_{m+1} - beta_m|| / ||beta_m - beta_{m-1}||`` (max norm), skipping
    zero denominators. Needs at least four beta iterates; returns None
    otherwise or when every denominator vanishes.
    """
    betas = [np.asarray(e.beta if isinstance(e, TraceEntry) else e, dtype=np.float64) for e in trace]
    if len(betas) < 4:
        return None
    diffs = [float(np.max(np.abs(b1 - b0))) for b0, b1 in zip(betas, betas[1:])]
    ratios = [d1 / d0 for d0, d1 in zip(diffs, diffs[1:]) if d0 > 0]
    ratios = ratios[-K:]
    if not ratios:
        return None
    if min(ratios) == 0.0:
        return 0.0
    return float(np.exp(np.mean(np.log(ratios))))
