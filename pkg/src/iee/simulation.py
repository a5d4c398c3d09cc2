"""Seeded data generators for the simulation designs and a Monte Carlo harness.

Designs
-------
``example2_split``
    Visit sets ``{1,3,5}`` (first ``ceil(fraction_135 * n)`` subjects) or
    ``{2,4}``; ``y_ij = b0 + b1 x_ij + u_i + w_ij + e_ij`` with
    time-varying ``x_ij ~ N(0, 1)``.
``example5_baseline``
    Same model, visit sets ``{1,2}`` (first half) and ``{1,3}``.
``small_hetero``
    Visits ``{1,2}`` for everyone, ``y_ij = b0 + b1 x_i + e_ij`` with
    ``x_i ~ U[0, 1]`` and independent ``e_ij ~ N(0, sigma_j^2)``.

Scenarios (example designs only): 1 normal ``u`` and AR(1) ``w``;
2 centred-exponential ``u``; 3 centred-exponential ``u`` and MA(1) ``w``.

Random streams come from ``SeedSequence(seed, spawn_key=(stream, rep))``:
covariates use stream 0 (replication 0 only, so they stay fixed for the
whole study) and noise uses stream 1 with the replication index.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import LongitudinalDataset, PairOnly, SubjectRecord, build_grouping
from .driver import IeeOptions, fit_iee, one_step_fit
from .errors import IEEError, NotConverged
from .gee import CovarianceSet, _solve_info, information, ols_linear
from .mean_model import Linear

__all__ = [
    "ScenarioSpec",
    "McSummary",
    "case_params",
    "generate",
    "exact_blue_covariance",
    "monte_carlo",
    "read_spec",
    "child_rng",
]

EXAMPLE2 = "example2_split"
EXAMPLE5 = "example5_baseline"
SMALL_HETERO = "small_hetero"
DESIGNS = (EXAMPLE2, EXAMPLE5, SMALL_HETERO)

STREAM_COVARIATES = 0
STREAM_NOISE = 1

ESTIMATORS = ("ols", "onestep", "irls")

_CASES = {
    1: dict(sigma_u2=1.0, sigma_w2=9.0, sigma_e2=1.0, phi=0.9),
    2: dict(sigma_u2=9.0, sigma_w2=25.0, sigma_e2=1.0, phi=0.99),
}


def case_params(case: int) -> dict:
    """Variance components of simulation case 1 or 2."""
    if case not in _CASES:
        raise ValueError(f"case must be 1 or 2, got {case!r}")
    return dict(_CASES[case])


def _design_name(name) -> str:
    """Accept ``example2_split`` as well as ``Example2Split``."""
    key = str(name).replace("_", "").lower()
    for d in DESIGNS:
        if d.replace("_", "") == key:
            return d
    raise ValueError(f"design must be one of {DESIGNS}, got {name!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    design: str = EXAMPLE2
    scenario: int = 1
    n: int = 100
    beta_true: tuple = (0.5, 1.0)
    sigma_u2: float = 1.0
    sigma_w2: float = 9.0
    sigma_e2: float = 1.0
    phi: float = 0.9
    sigma_1: float = 1.0
    sigma_2: float = 4.0
    fraction_135: float = 0.4
    ma_theta: float = 1.0
    seed: int = 20070901

    def __post_init__(self):
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(self, "design", _design_name(self.design))
        if self.scenario not in (1, 2, 3):
            raise ValueError("scenario must be 1, 2 or 3")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.design == EXAMPLE5 and self.n % 2:
            raise ValueError("example5_baseline needs an even n")
        if not abs(self.phi) < 1:
            raise ValueError("|phi| must be < 1")
        for name in ("sigma_u2", "sigma_w2", "sigma_e2", "sigma_1", "sigma_2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        if not 0 <= self.fraction_135 <= 1:
            raise ValueError("fraction_135 must lie in [0, 1]")
        if len(self.beta_true) != 2:
            raise ValueError("beta_true has two entries (intercept, slope)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def for_case(cls, scenario: int, case: int, **kw) -> ScenarioSpec:
        return cls(scenario=scenario, **case_params(case), **kw)

    @classmethod
    def from_dict(cls, doc: Mapping) -> ScenarioSpec:
        doc = dict(doc)
        params = doc.pop("case_params", {})
        if "case" in doc:
            params = {**case_params(int(doc.pop("case"))), **params}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        unknown |= set(params) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**params, **doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta_true"] = list(self.beta_true)
        return d

    @property
    def b(self) -> int:
        return {EXAMPLE2: 5, EXAMPLE5: 3, SMALL_HETERO: 2}[self.design]


def read_spec(path) -> ScenarioSpec:
    with Path(path).open() as fh:
        return ScenarioSpec.from_dict(json.load(fh))


def child_rng(seed: int, stream: int, rep: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream, rep)))


# --------------------------------------------------------------------------
# Design and noise
# --------------------------------------------------------------------------


def _visit_sets(spec: ScenarioSpec) -> list[tuple[int, ...]]:
    n = spec.n
    if spec.design == EXAMPLE2:
        n1 = math.ceil(spec.fraction_135 * n)
        return [(1, 3, 5)] * n1 + [(2, 4)] * (n - n1)
    if spec.design == EXAMPLE5:
        return [(1, 2)] * (n // 2) + [(1, 3)] * (n // 2)
    return [(1, 2)] * n


def _design(spec: ScenarioSpec) -> LongitudinalDataset:
    """Fixed covariates and visit sets; responses set to the true mean."""
    rng = child_rng(spec.seed, STREAM_COVARIATES)
    if spec.design == SMALL_HETERO:
        x = np.repeat(rng.uniform(0.0, 1.0, size=spec.n)[:, None], spec.b, axis=1)
    else:
        x = rng.standard_normal((spec.n, spec.b))
    beta = np.array(spec.beta_true)
    subjects = []
    for i, vs in enumerate(_visit_sets(spec)):
        cols = np.array(vs) - 1
        X = np.column_stack([np.ones(len(vs)), x[i, cols]])
        subjects.append(SubjectRecord(i + 1, np.array(vs), X @ beta, X))
    return LongitudinalDataset(tuple(subjects), b=spec.b, p=2, covariate_names=("intercept", "x"), intercept=True)


def serial_correlation(spec: ScenarioSpec, lag: int) -> float:
    """Autocorrelation of the serial component ``w`` at ``lag``."""
    lag = abs(lag)
    if spec.scenario == 3:
        if lag == 0:
            return 1.0
        return spec.ma_theta / (1 + spec.ma_theta**2) if lag == 1 else 0.0
    return spec.phi**lag


def true_cov(spec: ScenarioSpec, j: int, k: int) -> float:
    if spec.design == SMALL_HETERO:
        if j != k:
            return 0.0
        return (spec.sigma_1 if j == 1 else spec.sigma_2) ** 2
    return (
        spec.sigma_u2
        + spec.sigma_w2 * serial_correlation(spec, j - k)
        + spec.sigma_e2 * (j == k)
    )


def draw_noise(spec: ScenarioSpec, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Noise for ``n`` subjects at all ``b`` visits, shape ``(n, b)``."""
    n = spec.n if n is None else n
    b = spec.b
    if spec.design == SMALL_HETERO:
        sd = np.array([spec.sigma_1, spec.sigma_2])
        return rng.standard_normal((n, b)) * sd
    su = math.sqrt(spec.sigma_u2)
    sw = math.sqrt(spec.sigma_w2)
    if spec.scenario == 1:
        u = su * rng.standard_normal(n)
    else:
        u = su * (rng.standard_exponential(n) - 1.0)
    if spec.scenario == 3:
        z = rng.standard_normal((n, b + 1))
        th = spec.ma_theta
        w = sw * (z[:, 1:] + th * z[:, :-1]) / math.sqrt(1 + th**2)
    else:
        w = np.empty((n, b))
        w[:, 0] = sw * rng.standard_normal(n)
        innov = sw * math.sqrt(1 - spec.phi**2)
        for j in range(1, b):
            w[:, j] = spec.phi * w[:, j - 1] + innov * rng.standard_normal(n)
    e = math.sqrt(spec.sigma_e2) * rng.standard_normal((n, b))
    return u[:, None] + w + e


def _true_set(spec: ScenarioSpec, ds: LongitudinalDataset) -> CovarianceSet:
    Vb = np.array([[true_cov(spec, j, k) for k in range(1, spec.b + 1)] for j in range(1, spec.b + 1)])
    mats = [Vb[np.ix_(s.visits - 1, s.visits - 1)] for s in ds.subjects]
    return CovarianceSet.from_matrices(ds, mats)


def _with_noise(template: LongitudinalDataset, noise: np.ndarray) -> LongitudinalDataset:
    return template.with_responses(
        [s.y + noise[i, s.visits - 1] for i, s in enumerate(template.subjects)]
    )


def generate(spec: ScenarioSpec, rep: int = 0) -> tuple[LongitudinalDataset, CovarianceSet]:
    """Dataset for replication ``rep`` and the true covariance matrices."""
    template = _design(spec)
    noise = draw_noise(spec, child_rng(spec.seed, STREAM_NOISE, rep))
    return _with_noise(template, noise), _true_set(spec, template)


def exact_blue_covariance(ds: LongitudinalDataset, true_V: CovarianceSet) -> np.ndarray:
    """``(sum_i X_i' V_i^{-1} X_i)^{-1}`` for the design's fixed covariates."""
    cov = _solve_info(information(ds, Linear(), None, true_V), np.eye(ds.p))
    return 0.5 * (cov + cov.T)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


@dataclass(eq=False)
class McSummary:
    spec: dict
    n_rep: int
    estimators: tuple[str, ...]
    means: dict
    covs: dict
    n_ok: dict
    failures: dict
    step_hist: dict
    blue_cov: np.ndarray | None
    conv_tol: float = 1e-4
    estimates: dict = field(default_factory=dict, repr=False)
    steps: list = field(default_factory=list, repr=False)

    def step_fraction(self, lo: int, hi: int) -> float:
        """Fraction of all replications whose IRLS run converged in ``lo..hi`` steps."""
        hit = sum(c for s, c in self.step_hist.items() if lo <= s <= hi)
        return hit / self.n_rep

    def to_dict(self) -> dict:
        def mat(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "kind": "mc_summary",
            "spec": self.spec,
            "n_rep": self.n_rep,
            "conv_tol": self.conv_tol,
            "estimators": list(self.estimators),
            "means": {k: mat(v) for k, v in self.means.items()},
            "covariances": {k: mat(v) for k, v in self.covs.items()},
            "n_ok": dict(self.n_ok),
            "failures": dict(self.failures),
            "step_histogram": {str(k): v for k, v in sorted(self.step_hist.items())},
            "blue_covariance": mat(self.blue_cov),
        }


def _parse_estimators(estimators: Iterable[str]) -> tuple[str, ...]:
    names = [e.strip().lower().replace("-", "").replace("_", "") for e in estimators]
    bad = [e for e in names if e not in ESTIMATORS]
    if bad:
        raise ValueError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
    return tuple(e for e in ESTIMATORS if e in names)


def monte_carlo(
    spec: ScenarioSpec,
    n_rep: int,
    estimators: Iterable[str] = ESTIMATORS,
    opts: IeeOptions | None = None,
) -> McSummary:
    """Refit every requested estimator on ``n_rep`` fresh noise draws.

    Covariates stay fixed across replications. Runs that fail (including
    IRLS runs that do not converge) are tallied in ``failures`` and left out
    of the moment summaries; covariances use divisor ``n_ok - 1`` and are
    reported only when at least two runs succeeded.
    """
    if n_rep < 1:
        raise ValueError("n_rep must be >= 1")
    opts = opts or IeeOptions()
    names = _parse_estimators(estimators)
    template = _design(spec)
    true_V = _true_set(spec, template)
    grouping = build_grouping(template, PairOnly())
    model = Linear()
    est = {k: [] for k in names}
    failures = {k: 0 for k in names}
    steps: list[int] = []

    for rep in range(n_rep):
        ds = _with_noise(template, draw_noise(spec, child_rng(spec.seed, STREAM_NOISE, rep)))
        for name in names:
            try:
                if name == "ols":
                    beta = ols_linear(ds)
                elif name == "onestep":
                    beta = one_step_fit(ds, model, grouping, opts).beta_hat
                else:
                    fit = fit_iee(ds, model, grouping, opts)
                    beta = fit.beta_hat
                    steps.append(fit.steps_to_converge)
            except (IEEError, NotConverged):
                failures[name] += 1
                continue
            est[name].append(beta)

    estimates = {k: np.array(v).reshape(-1, template.p) for k, v in est.items()}
    means, covs = {}, {}
    for k, arr in estimates.items():
        means[k] = arr.mean(axis=0) if len(arr) else None
        covs[k] = np.cov(arr, rowvar=False, ddof=1) if len(arr) >= 2 else None
    hist: dict[int, int] = {}
    for s in steps:
        hist[s] = hist.get(s, 0) + 1
    try:
        blue = exact_blue_covariance(template, true_V)
    except IEEError:
        blue = None
    return McSummary(
        spec=spec.to_dict(),
        n_rep=n_rep,
        estimators=names,
        means=means,
        covs=covs,
        n_ok={k: len(v) for k, v in estimates.items()},
        failures=failures,
        step_hist=hist,
        blue_cov=blue,
        conv_tol=opts.conv_tol,
        estimates=estimates,
        steps=steps,
    )


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=seed)
