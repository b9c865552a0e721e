"""Survival statistics: Kaplan-Meier, log-rank, Harrell's C, Spearman and
Cox proportional hazards with the Efron tie correction.

Everything here is a pure function of its inputs and works in float64.
Functions taking ``obs`` accept a sequence of :class:`Observation`; the
``*_arrays`` variants take parallel ``time``/``event`` arrays and are what the
rest of the package uses on hot paths.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

Z_95 = 1.959964

# Newton-Raphson controls for fit_cox
MAX_ITER = 50
EPS = 1e-9
TOLER_INF = math.sqrt(EPS)
BETA_LIMIT = 500.0


class SurvivalError(ValueError):
    """Raised when a survival computation is undefined for the given data."""


class SeparationError(SurvivalError):
    pass


class CollinearityError(SurvivalError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class Observation:
    time: float
    event: bool

    def __post_init__(self):
        t = float(self.time)
        if not math.isfinite(t) or t < 0:
            raise ValueError(f"observation time must be finite and >= 0, got {self.time!r}")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "event", bool(self.event))


@dataclass(frozen=True)
class CovariateRow:
    values: tuple
    missing: tuple = None

    def __post_init__(self):
        vals = tuple(float("nan") if v is None else float(v) for v in self.values)
        if self.missing is None:
            miss = tuple(not math.isfinite(v) for v in vals)
        else:
            miss = tuple(bool(m) for m in self.missing)
            if len(miss) != len(vals):
                raise ValueError("missing mask length does not match values")
        for v, m in zip(vals, miss):
            if not m and not math.isfinite(v):
                raise ValueError("non-finite covariate value marked as present")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "missing", miss)

    @property
    def complete(self) -> bool:
        return not any(self.missing)


def observations(time, event) -> list:
    return [Observation(t, e) for t, e in zip(time, event)]


def _obs_arrays(obs):
    time = np.fromiter((o.time for o in obs), dtype=np.float64)
    event = np.fromiter((o.event for o in obs), dtype=bool)
    return time, event


# ---------------------------------------------------------------------------
# Kaplan-Meier


@dataclass
class KMCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    median: Optional[float]
    n: int = 0

    def survival_at(self, t: float) -> float:
        """Right-continuous step function value S(t)."""
        k = np.searchsorted(self.times, t, side="right")
        return 1.0 if k == 0 else float(self.survival[k - 1])


def km_estimate_arrays(time, event) -> KMCurve:
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=bool)
    if time.size == 0:
        raise SurvivalError("empty cohort")
    uniq = np.unique(time[event])
    sorted_t = np.sort(time)
    # at risk = number with time >= t
    at_risk = time.size - np.searchsorted(sorted_t, uniq, side="left")
    sorted_ev = np.sort(time[event])
    deaths = np.searchsorted(sorted_ev, uniq, side="right") - np.searchsorted(sorted_ev, uniq, side="left")
    surv = np.cumprod((at_risk - deaths) / at_risk)
    below = np.nonzero(surv <= 0.5)[0]
    median = float(uniq[below[0]]) if below.size else None
    return KMCurve(uniq, surv, at_risk.astype(np.int64), deaths.astype(np.int64), median, int(time.size))


def km_estimate(obs: Sequence[Observation]) -> KMCurve:
    if len(obs) == 0:
        raise SurvivalError("empty cohort")
    return km_estimate_arrays(*_obs_arrays(obs))


# ---------------------------------------------------------------------------
# Log-rank


@dataclass(frozen=True)
class LogRankResult:
    chi2: float
    df: int
    p: float


def logrank_arrays(time, event, group) -> LogRankResult:
    """k-sample log-rank test; ``group`` holds integer labels 0..k-1."""
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=bool)
    group = np.asarray(group)
    labels = np.unique(group)
    k = labels.size
    if k < 2:
        raise SurvivalError("log-rank test needs at least 2 groups")
    if not event.any():
        raise SurvivalError("no events")
    uniq = np.unique(time[event])
    n_gt = np.empty((k, uniq.size))
    d_gt = np.empty((k, uniq.size))
    for gi, g in enumerate(labels):
        tg = np.sort(time[group == g])
        eg = np.sort(time[(group == g) & event])
        n_gt[gi] = tg.size - np.searchsorted(tg, uniq, side="left")
        d_gt[gi] = np.searchsorted(eg, uniq, side="right") - np.searchsorted(eg, uniq, side="left")
    n_t = n_gt.sum(axis=0)
    d_t = d_gt.sum(axis=0)
    o_minus_e = (d_gt - d_t * n_gt / n_t).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(n_t > 1, d_t * (n_t - d_t) / (n_t - 1), 0.0)
    frac = n_gt / n_t
    cov = np.einsum("t,gt,ht->gh", w, frac, frac)
    var = np.diag((w * frac).sum(axis=1)) - cov
    x = o_minus_e[:-1]
    v = var[:-1, :-1]
    if not np.any(x):
        chi2 = 0.0
    else:
        chi2 = float(x @ np.linalg.pinv(v) @ x)
    chi2 = max(chi2, 0.0)
    df = k - 1
    return LogRankResult(chi2, df, float(stats.chi2.sf(chi2, df)))


def logrank_test(groups) -> LogRankResult:
    """Log-rank test over ``[(label, [Observation, ...]), ...]``."""
    groups = list(groups)
    if len(groups) < 2:
        raise SurvivalError("log-rank test needs at least 2 groups")
    times, events, labels = [], [], []
    for gi, (_, obs) in enumerate(groups):
        if len(obs) == 0:
            raise SurvivalError(f"group {groups[gi][0]!r} is empty")
        t, e = _obs_arrays(obs)
        times.append(t)
        events.append(e)
        labels.append(np.full(t.size, gi))
    return logrank_arrays(np.concatenate(times), np.concatenate(events), np.concatenate(labels))


# ---------------------------------------------------------------------------
# Concordance


def concordance_arrays(risk, time, event) -> float:
    """Harrell's C: a pair is comparable when the strictly shorter time is an
    event; higher risk should fail first, tied risks earn half credit."""
    risk = np.asarray(risk, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=bool)
    if not (risk.shape == time.shape == event.shape):
        raise ValueError("risk and observations must have equal length")
    twice_conc = 0
    pairs = 0
    ev_idx = np.nonzero(event)[0]
    chunk = max(1, 2_000_000 // max(time.size, 1))
    for start in range(0, ev_idx.size, chunk):
        idx = ev_idx[start:start + chunk]
        comparable = time[None, :] > time[idx, None]
        diff = risk[idx, None] - risk[None, :]
        pairs += int(comparable.sum())
        twice_conc += 2 * int((comparable & (diff > 0)).sum()) + int((comparable & (diff == 0)).sum())
    if pairs == 0:
        raise SurvivalError("no comparable pairs")
    return twice_conc / (2 * pairs)


def c_index(risk, obs: Sequence[Observation]) -> float:
    time, event = _obs_arrays(obs)
    return concordance_arrays(risk, time, event)


# ---------------------------------------------------------------------------
# Spearman


def spearman_test(x, y):
    """Spearman rank correlation with the t-approximation p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and of equal length")
    n = x.size
    if n < 3:
        raise ValueError("spearman_test needs at least 3 points")
    rx = stats.rankdata(x) - (n + 1) / 2.0
    ry = stats.rankdata(y) - (n + 1) / 2.0
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        raise SurvivalError("zero rank variance")
    rho = float(rx @ ry) / math.sqrt(sxx * syy)
    rho = min(1.0, max(-1.0, rho))
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * stats.t.sf(abs(t), n - 2))


# ---------------------------------------------------------------------------
# Efron partial likelihood


class RiskSets:
    """Sort order and tie blocks of a (time, event) sample, reusable across
    evaluations of the Efron partial likelihood."""

    def __init__(self, time, event):
        time = np.asarray(time, dtype=np.float64)
        event = np.asarray(event, dtype=bool)
        self.n = time.size
        # descending time: prefix sums over the sorted order are risk-set sums
        self.order = np.argsort(-time, kind="stable")
        ts = time[self.order]
        self.event_sorted = event[self.order]
        boundary = np.ones(self.n, dtype=bool)
        boundary[1:] = ts[1:] != ts[:-1]
        self.block_start = np.nonzero(boundary)[0]
        self.block_end = np.append(self.block_start[1:], self.n) - 1
        self.block_of = np.cumsum(boundary) - 1
        self.d = np.add.reduceat(self.event_sorted.astype(np.int64), self.block_start) if self.n else np.zeros(0, int)
        self.event_blocks = np.nonzero(self.d > 0)[0]
        d_ev = self.d[self.event_blocks]
        self.n_events = int(d_ev.sum())
        # one entry per (event block, l) with l = 0..d-1
        self.rep = np.repeat(np.arange(self.event_blocks.size), d_ev)
        offsets = np.repeat(np.cumsum(d_ev) - d_ev, d_ev)
        self.frac = (np.arange(self.n_events) - offsets) / np.repeat(d_ev, d_ev)

    def _event_sums(self, values):
        """Per event block sums of ``values`` (sorted order) over its events."""
        masked = values * self.event_sorted.reshape((-1,) + (1,) * (values.ndim - 1))
        return np.add.reduceat(masked, self.block_start, axis=0)[self.event_blocks]

    def loglik_eta(self, eta):
        """Efron log partial likelihood and its gradient w.r.t. the linear
        predictor ``eta`` (original subject order)."""
        eta = np.asarray(eta, dtype=np.float64)
        es = eta[self.order]
        es = es - es.max()
        r = np.exp(es)
        s0 = np.cumsum(r)[self.block_end[self.event_blocks]]
        a0 = self._event_sums(r)
        phi = s0[self.rep] - self.frac * a0[self.rep]
        loglik = float(es[self.event_sorted].sum() - np.log(phi).sum())
        inv_sum = np.bincount(self.rep, weights=1.0 / phi, minlength=self.event_blocks.size)
        frac_sum = np.bincount(self.rep, weights=self.frac / phi, minlength=self.event_blocks.size)
        per_block = np.zeros(self.block_start.size)
        per_block[self.event_blocks] = inv_sum
        # subjects at block b are at risk for every event block at or after b
        # in descending order, i.e. with time <= their own
        cum = np.cumsum(per_block[::-1])[::-1]
        own_frac = np.zeros(self.block_start.size)
        own_frac[self.event_blocks] = frac_sum
        grad_s = self.event_sorted - r * cum[self.block_of] + r * self.event_sorted * own_frac[self.block_of]
        grad = np.empty_like(grad_s)
        grad[self.order] = grad_s
        return loglik, grad

    def loglik_beta(self, X, beta, information=True):
        """Efron log partial likelihood, score and observed information for
        ``eta = X @ beta``."""
        Xs = np.asarray(X, dtype=np.float64)[self.order]
        es = Xs @ beta
        es = es - es.max()
        r = np.exp(es)
        ends = self.block_end[self.event_blocks]
        rX = r[:, None] * Xs
        s0 = np.cumsum(r)[ends]
        s1 = np.cumsum(rX, axis=0)[ends]
        a0 = self._event_sums(r)
        a1 = self._event_sums(rX)
        f = self.frac
        phi = s0[self.rep] - f * a0[self.rep]
        z1 = s1[self.rep] - f[:, None] * a1[self.rep]
        loglik = float(es[self.event_sorted].sum() - np.log(phi).sum())
        score = Xs[self.event_sorted].sum(axis=0) - (z1 / phi[:, None]).sum(axis=0)
        if not information:
            return loglik, score, None
        rXX = rX[:, :, None] * Xs[:, None, :]
        s2 = np.cumsum(rXX, axis=0)[ends]
        a2 = self._event_sums(rXX)
        z2 = s2[self.rep] - f[:, None, None] * a2[self.rep]
        info = (z2 / phi[:, None, None]).sum(axis=0) - np.einsum("k,ki,kj->ij", 1.0 / phi**2, z1, z1)
        return loglik, score, info


def efron_loglik(time, event, eta):
    """Efron log partial likelihood and gradient with respect to ``eta``."""
    return RiskSets(time, event).loglik_eta(eta)


# ---------------------------------------------------------------------------
# Cox proportional hazards


@dataclass
class CoxFit:
    names: list
    beta: np.ndarray
    se: np.ndarray
    hr: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    p: np.ndarray
    c_index: float
    n_used: int
    converged: bool
    n_events: int = 0
    loglik: float = float("nan")
    iterations: int = 0
    var: np.ndarray = field(default=None, repr=False)

    def linear_predictor(self, X):
        return np.asarray(X, dtype=np.float64) @ self.beta


def collinear_columns(X, names=None):
    """Names of columns that are constant or linear combinations of earlier
    columns (after centering, since the partial likelihood ignores intercepts)."""
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    Xc = X - X.mean(axis=0)
    scale = np.abs(Xc).max(axis=0)
    bad = []
    kept = []
    for j in range(p):
        if scale[j] == 0.0:
            bad.append(names[j])
            continue
        cand = kept + [j]
        M = Xc[:, cand] / scale[cand]
        if np.linalg.matrix_rank(M, tol=1e-10 * max(M.shape) ) < len(cand):
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def fit_cox_arrays(time, event, X, names=None) -> CoxFit:
    """Cox PH fit by Newton-Raphson with step halving (Efron ties).

    Rows with any non-finite covariate are dropped (complete-case). Raises
    :class:`CollinearityError` for constant/collinear columns and
    :class:`SeparationError` when the likelihood is monotone.
    """
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=bool)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    keep = np.isfinite(X).all(axis=1)
    time, event, X = time[keep], event[keep], X[keep]
    if not event.any():
        raise SurvivalError("no events")
    bad = collinear_columns(X, names)
    if bad:
        raise CollinearityError("collinear covariates: " + ", ".join(bad), bad)

    rs = RiskSets(time, event)
    beta = np.zeros(p)
    ll, score, info = rs.loglik_beta(X, beta)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise CollinearityError("collinear covariates: singular information matrix", names) from None
        new_beta = beta + step
        if np.abs(new_beta).max() > BETA_LIMIT:
            raise SeparationError("separation: coefficient diverged (monotone likelihood)")
        new_ll, new_score, new_info = rs.loglik_beta(X, new_beta)
        halvings = 0
        while not (new_ll >= ll or math.isclose(new_ll, ll, rel_tol=EPS)) and halvings < 30:
            step = step / 2.0
            new_beta = beta + step
            new_ll, new_score, new_info = rs.loglik_beta(X, new_beta)
            halvings += 1
        rel_change = abs(new_ll - ll) / max(abs(new_ll), 1e-300)
        beta, ll, score, info = new_beta, new_ll, new_score, new_info
        if np.abs(score).max() < EPS or rel_change < EPS:
            converged = True
            break

    try:
        var = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise CollinearityError("collinear covariates: singular information matrix", names) from None
    # one more Newton step would still move a coefficient: likelihood is flat
    # only because the coefficient is running off to infinity
    pending = np.abs(var @ score)
    runaway = (pending > EPS) & (pending > TOLER_INF * np.abs(beta))
    if converged and runaway.any():
        which = [names[j] for j in np.nonzero(runaway)[0]]
        raise SeparationError("separation: coefficient may be infinite for " + ", ".join(which))
    diag = np.diag(var)
    if np.any(diag <= 0):
        raise CollinearityError("collinear covariates: information not positive definite", names)
    se = np.sqrt(diag)
    z = beta / se
    lp = X @ beta
    try:
        cidx = concordance_arrays(lp, time, event)
    except SurvivalError:
        cidx = float("nan")
    return CoxFit(
        names=names,
        beta=beta,
        se=se,
        hr=np.exp(beta),
        ci_low=np.exp(beta - Z_95 * se),
        ci_high=np.exp(beta + Z_95 * se),
        p=2.0 * stats.norm.sf(np.abs(z)),
        c_index=cidx,
        n_used=int(time.size),
        converged=converged,
        n_events=int(event.sum()),
        loglik=ll,
        iterations=it,
        var=var,
    )


def fit_cox(rows, names=None) -> CoxFit:
    """Fit a Cox model on ``[(Observation, CovariateRow), ...]``."""
    rows = list(rows)
    if not rows:
        raise SurvivalError("no events")
    time = np.array([o.time for o, _ in rows])
    event = np.array([o.event for o, _ in rows])
    X = np.array([[np.nan if m else v for v, m in zip(c.values, c.missing)] for _, c in rows], dtype=np.float64)
    return fit_cox_arrays(time, event, X, names)


# ---------------------------------------------------------------------------
# Table formatting


def significance_stars(p: float) -> str:
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p <= 0.05:
        return "*"
    if p <= 0.1:
        return "."
    return ""


def format_p(p: float) -> str:
    text = "<0.0001" if p < 0.0001 else f"{p:.3f}"
    return text + significance_stars(p)


def format_hr_ci(hr: float, lo: float, hi: float) -> str:
    return f"{hr:.2f}({lo:.2f},{hi:.2f})"


def format_hr(fit: CoxFit, index: int, with_p: bool = False) -> str:
    text = format_hr_ci(fit.hr[index], fit.ci_low[index], fit.ci_high[index])
    if with_p:
        text += " " + format_p(fit.p[index])
    return text
