"""Synthetic cohorts and bags with known ground truth, plus a brute-force
partial-likelihood maximiser used to check the Cox fitter.

Generators draw from :class:`crcrisk.rng.Stream` with fixed stream ids per
purpose, so outputs are a pure function of the spec.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .cohort import Subject
from .mil import FeatureBag
from .rng import Stream
from .stratify import RiskClass
from .survival import CovariateRow, Observation
from .tissue import N_FEATURES, TissueClass

# stream ids
_S_COVARIATES = 1
_S_EVENT = 2
_S_CENSOR = 3
_S_TILES = 4
_S_FEATURES = 5
_S_NOISE = 6
_S_CLINICAL = 7


@dataclass
class CohortSpec:
    n: int
    beta_true: list
    baseline_rate: float = 0.01
    censor_rate: float = 0.005
    covariate_spec: list = None
    seed: int = 0

    def __post_init__(self):
        self.beta_true = [float(b) for b in self.beta_true]
        if self.covariate_spec is None:
            self.covariate_spec = [{"kind": "binary", "p": 0.5} for _ in self.beta_true]
        if self.n < 2:
            raise ValueError("cohort needs n >= 2")
        if self.baseline_rate <= 0 or self.censor_rate <= 0:
            raise ValueError("rates must be positive")
        if len(self.covariate_spec) != len(self.beta_true):
            raise ValueError("one covariate descriptor per coefficient")


@dataclass
class BagSpec:
    n_patients: int
    tiles_range: tuple = (5, 20)
    w_true: Optional[np.ndarray] = None
    noise_sigma: float = 0.0
    seed: int = 0
    baseline_rate: float = 0.02
    censor_rate: float = 0.01
    tissue: TissueClass = TissueClass.TUM

    def __post_init__(self):
        lo, hi = self.tiles_range
        if lo < 1 or hi < lo:
            raise ValueError("tiles_range must satisfy 1 <= min <= max")
        if self.n_patients < 2:
            raise ValueError("need at least 2 patients")
        if self.w_true is None:
            self.w_true = np.zeros(N_FEATURES)
        self.w_true = np.asarray(self.w_true, dtype=np.float64)
        self.tissue = TissueClass.parse(self.tissue)


def _covariates(spec_cols, n, stream):
    cols = []
    for desc in spec_cols:
        kind = desc.get("kind", "binary")
        if kind == "binary":
            cols.append(stream.bernoulli(n, float(desc.get("p", 0.5))).astype(np.float64))
        elif kind == "normal":
            cols.append(float(desc.get("mean", 0.0)) + float(desc.get("sd", 1.0)) * stream.normal(n))
        elif kind == "uniform":
            lo, hi = float(desc.get("low", 0.0)), float(desc.get("high", 1.0))
            cols.append(lo + (hi - lo) * stream.uniform(n))
        else:
            raise ValueError(f"unknown covariate kind {kind!r}")
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def exponential_survival(lin_pred, baseline_rate, censor_rate, seed):
    """Event time ~ Exp(baseline_rate * exp(lin_pred)), censoring ~
    Exp(censor_rate); returns (time, event)."""
    lin_pred = np.asarray(lin_pred, dtype=np.float64)
    n = lin_pred.size
    t_event = Stream(seed, _S_EVENT).exponential(n, baseline_rate * np.exp(lin_pred))
    t_cens = Stream(seed, _S_CENSOR).exponential(n, censor_rate)
    event = t_event <= t_cens
    return np.minimum(t_event, t_cens), event


def generate_cohort_arrays(spec: CohortSpec):
    X = _covariates(spec.covariate_spec, spec.n, Stream(spec.seed, _S_COVARIATES))
    time, event = exponential_survival(X @ np.asarray(spec.beta_true), spec.baseline_rate, spec.censor_rate, spec.seed)
    return time, event, X


def generate_cohort(spec: CohortSpec):
    """List of ``(Observation, CovariateRow)`` from an exponential PH model."""
    time, event, X = generate_cohort_arrays(spec)
    return [(Observation(t, e), CovariateRow(tuple(x))) for t, e, x in zip(time, event, X)]


class SyntheticBags(NamedTuple):
    bags: list
    obs: list
    true_risk: np.ndarray


def generate_bags(spec: BagSpec) -> SyntheticBags:
    """Bags of i.i.d. N(0, 1) tile features; each patient's log-hazard is the
    mean tile score under ``w_true`` plus N(0, noise_sigma^2) noise."""
    lo, hi = spec.tiles_range
    n = spec.n_patients
    counts = lo + Stream(spec.seed, _S_TILES).choice(n, np.ones(hi - lo + 1))
    d = spec.w_true.size
    feats = Stream(spec.seed, _S_FEATURES).normal(int(counts.sum()) * d).reshape(-1, d)
    splits = np.cumsum(counts)[:-1]
    per_patient = np.split(feats, splits)
    mean_scores = np.array([float((f @ spec.w_true).mean()) for f in per_patient])
    risk = mean_scores + spec.noise_sigma * Stream(spec.seed, _S_NOISE).normal(n)
    time, event = exponential_survival(risk, spec.baseline_rate, spec.censor_rate, spec.seed)
    bags = [FeatureBag(f"P{i:04d}", spec.tissue, f) for i, f in enumerate(per_patient)]
    obs = [Observation(t, e) for t, e in zip(time, event)]
    return SyntheticBags(bags, obs, risk)


def strong_signal_w(seed, norm=20.0, d=N_FEATURES):
    """A random direction in feature space scaled to ``norm``."""
    w = Stream(seed, 0x5157).normal(d)
    return norm * w / np.linalg.norm(w)


# ---------------------------------------------------------------------------
# brute-force partial likelihood


def efron_pll_direct(time, event, x, beta):
    """Efron log partial likelihood for one covariate, evaluated term by term
    from the definition (no sorting tricks, no shared code with the fitter)."""
    time = [float(t) for t in time]
    event = [bool(e) for e in event]
    x = [float(v) for v in x]
    n = len(time)
    total = 0.0
    for t in sorted({time[i] for i in range(n) if event[i]}):
        dead = [i for i in range(n) if event[i] and time[i] == t]
        risk = [i for i in range(n) if time[i] >= t]
        d = len(dead)
        s_risk = sum(math.exp(beta * x[i]) for i in risk)
        s_dead = sum(math.exp(beta * x[i]) for i in dead)
        for i in dead:
            total += beta * x[i]
        for l in range(d):
            total -= math.log(s_risk - (l / d) * s_dead)
    return total


@dataclass
class OracleResult:
    beta: float
    loglik: float
    at_boundary: bool
    grid: np.ndarray = field(repr=False, default=None)


def brute_force_partial_likelihood(rows, beta_grid=None, tol=1e-9) -> OracleResult:
    """Maximise the 1-covariate Efron partial likelihood by grid search then
    golden-section refinement.

    ``rows`` are ``(Observation, CovariateRow)`` pairs or ``(time, event, x)``
    triples. ``at_boundary`` is set when the grid maximum sits on an end of
    the grid, i.e. the likelihood looks monotone there.
    """
    rows = list(rows)
    if len(rows) > 50:
        raise ValueError("brute-force oracle is limited to 50 rows")
    if rows and isinstance(rows[0][0], Observation):
        time = [o.time for o, _ in rows]
        event = [o.event for o, _ in rows]
        x = [c.values[0] for _, c in rows]
    else:
        time, event, x = (list(col) for col in zip(*rows))
    if beta_grid is None:
        beta_grid = np.linspace(-10.0, 10.0, 401)
    grid = np.asarray(beta_grid, dtype=np.float64)
    f = lambda b: efron_pll_direct(time, event, x, b)  # noqa: E731
    values = np.array([f(b) for b in grid])
    k = int(np.argmax(values))
    if k == 0 or k == grid.size - 1:
        return OracleResult(float(grid[k]), float(values[k]), True, grid)
    a, c = grid[k - 1], grid[k + 1]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = c - invphi * (c - a)
    x2 = a + invphi * (c - a)
    f1, f2 = f(x1), f(x2)
    while c - a > tol:
        if f1 >= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - invphi * (c - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (c - a)
            f2 = f(x2)
    b = 0.5 * (a + c)
    return OracleResult(float(b), f(b), False, grid)


# ---------------------------------------------------------------------------
# clinical cohorts


@dataclass
class ClinicalSpec:
    """Simulated clinical cohort with risk classes and a treatment effect
    that may differ by class."""

    n: int
    seed: int = 0
    baseline_rate: float = 0.01
    censor_rate: float = 0.01
    class_probs: tuple = (0.37, 0.24, 0.39)
    class_log_hr: tuple = (0.0, 0.5, 0.9)
    treatment_prob: float = 0.5
    treatment_log_hr: tuple = (0.0, 0.0, 0.0)
    fu5_share: float = 0.65
    stage3_prob: float = 0.47

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("cohort needs n >= 2")
        if self.baseline_rate <= 0 or self.censor_rate <= 0:
            raise ValueError("rates must be positive")
        if len(self.class_probs) != 3 or len(self.class_log_hr) != 3 or len(self.treatment_log_hr) != 3:
            raise ValueError("class_probs, class_log_hr and treatment_log_hr need 3 entries (Low, Medium, High)")


def _clinical_covariates(stream, n, spec):
    return {
        "treated": stream.bernoulli(n, spec.treatment_prob),
        "fu5": stream.bernoulli(n, spec.fu5_share),
        "stage3": stream.bernoulli(n, spec.stage3_prob),
        "age": np.round(50 + 40 * stream.uniform(n)),
        "female": stream.bernoulli(n, 0.47),
        "t4": stream.bernoulli(n, 0.23),
        "n2": stream.bernoulli(n, 0.16),
        "rectum": stream.bernoulli(n, 0.36),
        "msi": stream.bernoulli(n, 0.16),
        "kras": stream.bernoulli(n, 0.32),
        "braf": stream.bernoulli(n, 0.13),
        "lvi": stream.bernoulli(n, 0.39),
    }


def _subjects(ids, time, event, cov, classes=None):
    out = []
    for i, pid in enumerate(ids):
        out.append(
            Subject(
                patient_id=pid,
                os_months=float(time[i]),
                os_event=bool(event[i]),
                age=float(cov["age"][i]),
                sex="F" if cov["female"][i] else "M",
                stage="III" if cov["stage3"][i] else "II",
                pT="T4" if cov["t4"][i] else "T1_3",
                pN="N2" if cov["n2"][i] else "N0_1",
                location="rectum" if cov["rectum"][i] else "colon",
                treatment=("fu5" if cov["fu5"][i] else "other") if cov["treated"][i] else "none",
                msi="MSI_H" if cov["msi"][i] else "MSS",
                kras="mutated" if cov["kras"][i] else "wild",
                braf="mutated" if cov["braf"][i] else "wild",
                lymphovascular="yes" if cov["lvi"][i] else "no",
                risk_class=None if classes is None else RiskClass(int(classes[i])),
            )
        )
    return out


def generate_clinical(spec: ClinicalSpec, risk_class=None):
    """Simulated subjects (see :mod:`crcrisk.cohort`) with exponential
    survival. ``risk_class``, if given, fixes each subject's class index
    (0=Low, 1=Medium, 2=High) instead of drawing it."""
    n = spec.n
    s = Stream(spec.seed, _S_CLINICAL)
    cls = np.asarray(risk_class) if risk_class is not None else s.choice(n, spec.class_probs)
    cov = _clinical_covariates(s, n, spec)
    lp = np.asarray(spec.class_log_hr)[cls] + cov["treated"] * np.asarray(spec.treatment_log_hr)[cls]
    time, event = exponential_survival(lp, spec.baseline_rate, spec.censor_rate, spec.seed)
    return _subjects([f"P{i:04d}" for i in range(n)], time, event, cov, cls)


class Fixture(NamedTuple):
    subjects: list
    bags: list
    true_risk: np.ndarray


def generate_fixture(n, tissues, seed=0, tiles_range=(5, 20), baseline_rate=0.02, censor_rate=0.01, noise_sigma=0.0):
    """Clinical subjects plus bags for several tissues sharing one latent risk.

    ``tissues`` maps a tissue to the norm of its true scorer (0 = pure noise).
    A patient's log-hazard is the sum over tissues of the mean tile score
    under that tissue's scorer. Subjects carry no risk class.
    """
    lo, hi = tiles_range
    if lo < 1 or hi < lo:
        raise ValueError("tiles_range must satisfy 1 <= min <= max")
    if n < 2:
        raise ValueError("need at least 2 patients")
    ids = [f"P{i:04d}" for i in range(n)]
    risk = np.zeros(n)
    bags = []
    for tissue, norm in sorted(((TissueClass.parse(t), float(v)) for t, v in tissues.items())):
        sub = seed * 16 + int(tissue) + 1
        counts = lo + Stream(sub, _S_TILES).choice(n, np.ones(hi - lo + 1))
        feats = Stream(sub, _S_FEATURES).normal(int(counts.sum()) * N_FEATURES).reshape(-1, N_FEATURES)
        # float32 so that bags written to disk reproduce these exact features
        feats = feats.astype(np.float32).astype(np.float64)
        per_patient = np.split(feats, np.cumsum(counts)[:-1])
        w = strong_signal_w(sub, norm) if norm > 0 else np.zeros(N_FEATURES)
        risk += np.array([float((f @ w).mean()) for f in per_patient])
        bags += [FeatureBag(pid, tissue, f) for pid, f in zip(ids, per_patient)]
    risk += noise_sigma * Stream(seed, _S_NOISE).normal(n)
    time, event = exponential_survival(risk, baseline_rate, censor_rate, seed)
    cov = _clinical_covariates(Stream(seed, _S_CLINICAL), n, ClinicalSpec(n))
    return Fixture(_subjects(ids, time, event, cov), bags, risk)
