"""Cohort-level analyses: clinical CSV ingestion, stage-stratified splits,
univariate/multivariate Cox tables, chemotherapy forest rows, Kaplan-Meier
exports and risk-factor associations.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from .rng import Stream
from .stratify import RiskClass
from .survival import (
    SurvivalError,
    concordance_arrays,
    fit_cox_arrays,
    format_hr_ci,
    format_p,
    km_estimate_arrays,
    logrank_arrays,
    spearman_test,
)

log = logging.getLogger(__name__)

CLINICAL_COLUMNS = [
    "patient_id", "os_months", "os_event", "age", "sex", "stage", "pT", "pN",
    "location", "treatment", "msi", "kras", "braf", "lymphovascular",
]
MISSING_TOKENS = {"", "na", "nan", "n/a", "missing", "null", "none_given", "."}
SURVIVAL_HORIZON_MONTHS = 48.0


class SchemaError(ValueError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


@dataclass
class Subject:
    patient_id: str
    os_months: float
    os_event: bool
    stage: str
    age: Optional[float] = None
    sex: Optional[str] = None
    pT: Optional[str] = None
    pN: Optional[str] = None
    location: Optional[str] = None
    treatment: Optional[str] = None
    msi: Optional[str] = None
    kras: Optional[str] = None
    braf: Optional[str] = None
    lymphovascular: Optional[str] = None
    risk_class: Optional[RiskClass] = None


# canonical level -> accepted spellings (lower case)
_LEVELS = {
    "sex": {"M": {"m", "male"}, "F": {"f", "female"}},
    "stage": {"II": {"ii", "2", "stage ii"}, "III": {"iii", "3", "stage iii"}},
    "pT": {"T1_3": {"t1_3", "t1-t3", "pt1-pt3", "t1", "t2", "t3", "pt1", "pt2", "pt3"}, "T4": {"t4", "pt4", "t4a", "t4b"}},
    "pN": {"N0_1": {"n0_1", "n0-n1", "n0", "n1", "pn0", "pn1"}, "N2": {"n2", "pn2", "n2a", "n2b"}},
    "location": {"colon": {"colon"}, "rectum": {"rectum", "rectal"}},
    "treatment": {"none": {"none", "no", "untreated"}, "chemo": {"chemo", "treated", "yes"}, "fu5": {"fu5", "5fu", "5-fu", "5 fu"}, "other": {"other"}},
    "msi": {"MSI_H": {"msi_h", "msi-h", "msi"}, "MSS": {"mss", "msi-l", "msi_l"}},
    "kras": {"wild": {"wild", "wt", "wild type", "wildtype"}, "mutated": {"mutated", "mut", "mutant"}},
    "braf": {"wild": {"wild", "wt", "wild type", "wildtype"}, "mutated": {"mutated", "mut", "mutant"}},
    "lymphovascular": {"yes": {"yes", "y", "1", "present"}, "no": {"no", "n", "0", "absent"}},
}
_LOOKUP = {col: {alias: canon for canon, aliases in lv.items() for alias in aliases | {canon.lower()}} for col, lv in _LEVELS.items()}
_EVENT_TOKENS = {"1": True, "0": False, "true": True, "false": False, "yes": True, "no": False, "dead": True, "alive": False}


def _is_missing(text):
    return text.strip().lower() in MISSING_TOKENS


def _parse_level(column, text):
    return _LOOKUP[column].get(text.strip().lower())


@dataclass
class IngestReport:
    rejected: list = field(default_factory=list)
    warnings: int = 0


def read_clinical(path):
    """Parse a clinical CSV into ``(subjects, IngestReport)``.

    Unparseable optional cells become missing and count as warnings; rows
    without a usable ``os_months``/``os_event``/``stage`` are rejected.
    """
    report = IngestReport()
    subjects = []
    seen = set()
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in CLINICAL_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing required column {col!r}", col)
        for col in header:
            if col not in CLINICAL_COLUMNS:
                raise SchemaError(f"unexpected column {col!r}", col)
        for lineno, raw in enumerate(reader, start=2):
            row = {k.strip(): (v or "") for k, v in raw.items() if k is not None}
            pid = row["patient_id"].strip()
            if not pid:
                report.rejected.append((lineno, "empty patient_id"))
                continue
            if pid in seen:
                raise SchemaError(f"duplicate patient {pid!r} at line {lineno}", "patient_id")
            seen.add(pid)
            try:
                t = float(row["os_months"])
                if not math.isfinite(t) or t < 0:
                    raise ValueError
            except ValueError:
                report.rejected.append((lineno, "bad os_months"))
                continue
            ev = _EVENT_TOKENS.get(row["os_event"].strip().lower())
            if ev is None:
                report.rejected.append((lineno, "bad os_event"))
                continue
            stage = _parse_level("stage", row["stage"])
            if stage is None:
                report.rejected.append((lineno, "missing stage"))
                continue
            values = {}
            for col in ("sex", "pT", "pN", "location", "treatment", "msi", "kras", "braf", "lymphovascular"):
                text = row[col]
                if _is_missing(text):
                    values[col] = None
                    continue
                values[col] = _parse_level(col, text)
                if values[col] is None:
                    report.warnings += 1
            age = None
            if not _is_missing(row["age"]):
                try:
                    age = float(row["age"])
                    if not math.isfinite(age):
                        raise ValueError
                except ValueError:
                    age = None
                    report.warnings += 1
            subjects.append(Subject(pid, t, ev, stage, age=age, **values))
    if report.warnings:
        log.warning("%s: %d unparseable cells treated as missing", path, report.warnings)
    if report.rejected:
        log.warning("%s: %d rows rejected", path, len(report.rejected))
    return subjects, report


def ingest_clinical(path):
    return read_clinical(path)[0]


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def write_clinical(path, subjects):
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLINICAL_COLUMNS)
        for s in subjects:
            w.writerow([_fmt(getattr(s, c)) for c in CLINICAL_COLUMNS])


# ---------------------------------------------------------------------------
# splits


def _by_stage(subjects):
    groups = {}
    for s in sorted(subjects, key=lambda s: s.patient_id):
        groups.setdefault(s.stage, []).append(s.patient_id)
    return [groups[k] for k in sorted(groups)]


def stratified_folds(subjects, k=5, seed=0):
    """``{patient_id: fold}``; within each stage a seeded shuffle is dealt
    round-robin, continuing the deal across stages to balance fold sizes."""
    if k < 2:
        raise ValueError("k must be >= 2")
    groups = _by_stage(subjects)
    for ids in groups:
        if len(ids) < k:
            raise ValueError(f"k={k} exceeds the number of subjects in a stage ({len(ids)})")
    folds = {}
    offset = 0
    for si, ids in enumerate(groups):
        perm = Stream(seed, 0xF01D + si).permutation(len(ids))
        for j, idx in enumerate(perm):
            folds[ids[idx]] = (offset + j) % k
        offset += len(ids)
    return folds


def train_validate_split(subjects, fraction=0.8, seed=0):
    """Stage-stratified seeded split into ``(train, validation)`` lists."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    train_ids = set()
    for si, ids in enumerate(_by_stage(subjects)):
        perm = Stream(seed, 0x5B17 + si).permutation(len(ids))
        n_train = int(math.floor(fraction * len(ids) + 0.5))
        train_ids.update(ids[i] for i in perm[:n_train])
    train = [s for s in subjects if s.patient_id in train_ids]
    valid = [s for s in subjects if s.patient_id not in train_ids]
    if not train or not valid:
        raise ValueError("split leaves one side empty")
    return train, valid


# ---------------------------------------------------------------------------
# design matrices


@dataclass(frozen=True)
class Predictor:
    name: str
    attribute: str
    reference: Optional[str] = None
    levels: tuple = ()

    @property
    def continuous(self):
        return self.reference is None


PREDICTORS = {
    "risk_class": Predictor("Risk class", "risk_class", "Low", ("Medium", "High")),
    "kras": Predictor("KRAS", "kras", "mutated", ("wild",)),
    "braf": Predictor("BRAF", "braf", "mutated", ("wild",)),
    "msi": Predictor("MSI status", "msi", "MSS", ("MSI_H",)),
    "sex": Predictor("Sex", "sex", "M", ("F",)),
    "age": Predictor("Age", "age"),
    "lymphovascular": Predictor("Lymphovascular invasion", "lymphovascular", "no", ("yes",)),
    "pT": Predictor("pT stage", "pT", "T1_3", ("T4",)),
    "pN": Predictor("pN stage", "pN", "N0_1", ("N2",)),
    "stage": Predictor("Stage", "stage", "II", ("III",)),
    "location": Predictor("Location", "location", "colon", ("rectum",)),
}
UNIVARIATE_PREDICTORS = ["risk_class", "kras", "braf", "msi", "sex", "age", "lymphovascular", "pT", "pN", "stage"]
MULTIVARIATE_PREDICTORS = ["risk_class", "kras", "braf", "msi", "sex", "age", "lymphovascular", "pT", "pN"]


def _value(subject, attr):
    v = getattr(subject, attr)
    if isinstance(v, RiskClass):
        return v.name
    return v


def predictor_columns(subjects, key):
    """Design columns for one predictor: ``(names, levels, X)``. Missing
    values are NaN; categorical levels become 0/1 indicators."""
    pred = PREDICTORS[key]
    vals = [_value(s, pred.attribute) for s in subjects]
    if pred.continuous:
        X = np.array([np.nan if v is None else float(v) for v in vals])[:, None]
        return [key], [None], X
    names, levels, cols = [], [], []
    for lv in pred.levels:
        names.append(f"{key}={lv}")
        levels.append(lv)
        cols.append([np.nan if v is None else float(v == lv) for v in vals])
    X = np.array(cols, dtype=np.float64).T
    # values outside the coded levels (e.g. chemo as a sex code) are missing
    known = {pred.reference, *pred.levels}
    bad = np.array([v is not None and v not in known for v in vals])
    X[bad] = np.nan
    return names, levels, X


def _surv_arrays(subjects):
    return (
        np.array([s.os_months for s in subjects], dtype=np.float64),
        np.array([s.os_event for s in subjects], dtype=bool),
    )


# ---------------------------------------------------------------------------
# Cox tables


@dataclass
class CoxRow:
    predictor: str
    level: str
    n: int = 0
    events: int = 0
    hr: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    p: float = float("nan")
    hr_text: str = ""
    p_text: str = ""
    c_index: float = float("nan")
    c_index_sd: float = float("nan")
    status: str = "ok"


def _fold_c_sd(time, event, X, fold_of):
    cs = []
    for k in np.unique(fold_of):
        test = fold_of == k
        try:
            fit = fit_cox_arrays(time[~test], event[~test], X[~test])
            ok = np.isfinite(X[test]).all(axis=1)
            cs.append(concordance_arrays(X[test][ok] @ fit.beta, time[test][ok], event[test][ok]))
        except SurvivalError:
            continue
    return float(np.std(cs, ddof=1)) if len(cs) >= 2 else float("nan")


def univariate_table(subjects, predictors=None, folds=None, seed=0, k=5):
    """One single-predictor Cox fit per predictor.

    Each predictor contributes a header row (carrying C-index and its SD
    across ``k`` stage-stratified cross-validation folds), a reference row and
    one row per non-reference level.
    """
    predictors = list(predictors or UNIVARIATE_PREDICTORS)
    subjects = sorted(subjects, key=lambda s: s.patient_id)
    time, event = _surv_arrays(subjects)
    if folds is None:
        try:
            folds = stratified_folds(subjects, k=k, seed=seed)
        except ValueError:
            folds = {}
    fold_of = np.array([folds.get(s.patient_id, -1) for s in subjects])
    rows = []
    for key in predictors:
        pred = PREDICTORS[key]
        names, levels, X = predictor_columns(subjects, key)
        complete = np.isfinite(X).all(axis=1)
        n_used = int(complete.sum())
        n_events = int(event[complete].sum())
        present = [j for j in range(X.shape[1]) if np.nansum(X[complete, j]) > 0]
        header = CoxRow(pred.name, "", n_used, n_events)
        level_rows = []
        if not pred.continuous:
            Xc, ec = X[complete], event[complete]
            is_ref = Xc.sum(axis=1) == 0
            level_rows.append(CoxRow(pred.name, pred.reference, int(is_ref.sum()), int(ec[is_ref].sum()), hr_text="1(ref)", p_text="--"))
            level_rows += [CoxRow(pred.name, lv, int(Xc[:, j].sum()), int(ec[Xc[:, j] == 1].sum())) for j, lv in enumerate(levels)]
        usable = present if not pred.continuous else [0]
        n_levels_seen = len(np.unique(X[complete][:, 0])) if pred.continuous else len(present) + int(
            (X[complete][:, present].sum(axis=1) == 0).any() if present else n_used > 0
        )
        fit = None
        if n_used == 0 or n_levels_seen < 2 or not usable:
            header.status = "not estimable"
        else:
            try:
                fit = fit_cox_arrays(time, event, X[:, usable], [names[j] for j in usable])
            except SurvivalError as exc:
                header.status = f"not estimable: {exc}"
        if fit is not None:
            header.c_index = fit.c_index
            if (fold_of >= 0).any():
                header.c_index_sd = _fold_c_sd(time[fold_of >= 0], event[fold_of >= 0], X[fold_of >= 0][:, usable], fold_of[fold_of >= 0])
            targets = [header] if pred.continuous else level_rows[1:]
            for j, row in zip(range(X.shape[1]), targets):
                if j not in usable:
                    row.status = "not estimable"
                    continue
                i = usable.index(j)
                row.hr, row.ci_low, row.ci_high, row.p = fit.hr[i], fit.ci_low[i], fit.ci_high[i], fit.p[i]
                row.hr_text = format_hr_ci(row.hr, row.ci_low, row.ci_high)
                row.p_text = format_p(row.p)
        elif not pred.continuous:
            for row in level_rows[1:]:
                row.status = "not estimable"
        rows.append(header)
        rows += level_rows
    return rows


@dataclass
class MultivariateResult:
    fit: object
    rows: list


def multivariate_table(subjects, predictors=None, min_rows_per_column=10):
    """Joint Cox fit over all predictors (complete cases)."""
    predictors = list(predictors or MULTIVARIATE_PREDICTORS)
    subjects = sorted(subjects, key=lambda s: s.patient_id)
    time, event = _surv_arrays(subjects)
    blocks = [predictor_columns(subjects, key) for key in predictors]
    names = [n for b in blocks for n in b[0]]
    X = np.column_stack([b[2] for b in blocks])
    complete = np.isfinite(X).all(axis=1)
    if complete.sum() < min_rows_per_column * X.shape[1]:
        raise SurvivalError(
            f"too few complete cases: {int(complete.sum())} < {min_rows_per_column} x {X.shape[1]} columns"
        )
    fit = fit_cox_arrays(time, event, X, names)
    rows = []
    j = 0
    for key, (cols, levels, _) in zip(predictors, blocks):
        pred = PREDICTORS[key]
        if not pred.continuous:
            rows.append(CoxRow(pred.name, pred.reference, fit.n_used, fit.n_events, hr_text="1(ref)", p_text="--"))
        for lv in levels:
            row = CoxRow(pred.name, lv or "", fit.n_used, fit.n_events, fit.hr[j], fit.ci_low[j], fit.ci_high[j], fit.p[j])
            row.hr_text = format_hr_ci(row.hr, row.ci_low, row.ci_high)
            row.p_text = format_p(row.p)
            rows.append(row)
            j += 1
    rows.append(CoxRow("Model", "", fit.n_used, fit.n_events, c_index=fit.c_index))
    return MultivariateResult(fit, rows)


# ---------------------------------------------------------------------------
# chemotherapy forest


TREATED = {"any_chemo": {"chemo", "fu5", "other"}, "fu5_only": {"fu5"}}


@dataclass
class ForestRow:
    risk_class: str
    n_treated: int
    n_untreated: int
    hr: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    p: float = float("nan")
    logrank_p: float = float("nan")
    surv48_treated: float = float("nan")
    surv48_untreated: float = float("nan")
    status: str = "ok"

    @property
    def hr_text(self):
        return format_hr_ci(self.hr, self.ci_low, self.ci_high) if math.isfinite(self.hr) else ""


def forest_chemo(subjects, treatment_filter="any_chemo", treated_is_exposure=True):
    """Treated-vs-untreated Cox HR within each risk class plus an overall row.

    With ``treated_is_exposure=False`` the indicator is flipped (untreated vs
    treated), giving the reciprocal HR.
    """
    if treatment_filter not in TREATED:
        raise ValueError(f"treatment_filter must be one of {sorted(TREATED)}")
    treated_set = TREATED[treatment_filter]
    arms = [s for s in subjects if s.treatment == "none" or s.treatment in treated_set]
    strata = [("All", arms)] + [
        (rc.name, [s for s in arms if s.risk_class == rc]) for rc in (RiskClass.Low, RiskClass.Medium, RiskClass.High)
    ]
    rows = []
    for label, group in strata:
        group = sorted(group, key=lambda s: s.patient_id)
        x = np.array([s.treatment in treated_set for s in group], dtype=np.float64)
        row = ForestRow(label, int(x.sum()), int((x == 0).sum()))
        if row.n_treated == 0 or row.n_untreated == 0:
            row.status = "not estimable"
            rows.append(row)
            continue
        time, event = _surv_arrays(group)
        exposure = x if treated_is_exposure else 1.0 - x
        try:
            fit = fit_cox_arrays(time, event, exposure[:, None], ["treated"])
            row.hr, row.ci_low, row.ci_high, row.p = fit.hr[0], fit.ci_low[0], fit.ci_high[0], fit.p[0]
            row.logrank_p = logrank_arrays(time, event, x.astype(int)).p
        except SurvivalError as exc:
            row.status = f"not estimable: {exc}"
        row.surv48_treated = km_estimate_arrays(time[x == 1], event[x == 1]).survival_at(SURVIVAL_HORIZON_MONTHS)
        row.surv48_untreated = km_estimate_arrays(time[x == 0], event[x == 0]).survival_at(SURVIVAL_HORIZON_MONTHS)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Kaplan-Meier exports


@dataclass
class KMExport:
    group_by: str
    stratify_by: Optional[str]
    curves: dict  # (stratum, group) -> KMCurve
    tests: list  # (stratum, comparison, LogRankResult)


def _group_label(subject, attr):
    v = _value(subject, attr)
    return None if v is None else str(v)


def _group_order(attr, labels):
    if attr == "risk_class":
        order = [rc.name for rc in RiskClass]
        return [l for l in order if l in labels]
    return sorted(labels)


def km_export(subjects, group_by="risk_class", stratify_by=None):
    """Kaplan-Meier curve per (stratum, group) with log-rank tests across all
    groups and between each pair of groups within a stratum."""
    strata = {}
    for s in subjects:
        g = _group_label(s, group_by)
        st = "all" if stratify_by is None else _group_label(s, stratify_by)
        if g is None or st is None:
            continue
        strata.setdefault(st, {}).setdefault(g, []).append(s)
    curves, tests = {}, []
    for st in sorted(strata):
        groups = strata[st]
        labels = _group_order(group_by, set(groups))
        arrays = {}
        for g in labels:
            time, event = _surv_arrays(groups[g])
            curves[(st, g)] = km_estimate_arrays(time, event)
            arrays[g] = (time, event)
        if len(labels) < 2:
            continue
        comparisons = [("all", labels)] if len(labels) > 2 else []
        comparisons += [(f"{a} vs {b}", [a, b]) for a, b in combinations(labels, 2)]
        for name, members in comparisons:
            time = np.concatenate([arrays[g][0] for g in members])
            event = np.concatenate([arrays[g][1] for g in members])
            lab = np.concatenate([np.full(arrays[g][0].size, i) for i, g in enumerate(members)])
            try:
                tests.append((st, name, logrank_arrays(time, event, lab)))
            except SurvivalError as exc:
                log.warning("log-rank %s/%s skipped: %s", st, name, exc)
    return KMExport(group_by, stratify_by, curves, tests)


def write_km(path_prefix, export: KMExport):
    """Write ``<prefix>.csv`` (step curves) and ``<prefix>_tests.csv``."""
    path_prefix = str(path_prefix)
    with open(path_prefix + ".csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "group", "time", "at_risk", "events", "survival"])
        for (st, g), c in export.curves.items():
            w.writerow([st, g, "0", c.n, 0, "1.0"])
            for t, n, d, s in zip(c.times, c.at_risk, c.events, c.survival):
                w.writerow([st, g, repr(float(t)), int(n), int(d), repr(float(s))])
    with open(path_prefix + "_tests.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "comparison", "chi2", "df", "p", "p_text"])
        for st, name, r in export.tests:
            w.writerow([st, name, repr(float(r.chi2)), r.df, repr(float(r.p)), format_p(r.p)])
        w.writerow([])
        w.writerow(["stratum", "group", "n", "events", "median", f"survival_{int(SURVIVAL_HORIZON_MONTHS)}m"])
        for (st, g), c in export.curves.items():
            w.writerow([st, g, c.n, int(c.events.sum()), "NR" if c.median is None else repr(float(c.median)),
                        repr(float(c.survival_at(SURVIVAL_HORIZON_MONTHS)))])


# ---------------------------------------------------------------------------
# associations


_ORDINAL = {
    "stage": {"II": 0, "III": 1},
    "pT": {"T1_3": 0, "T4": 1},
    "pN": {"N0_1": 0, "N2": 1},
    "msi": {"MSS": 0, "MSI_H": 1},
    "kras": {"wild": 0, "mutated": 1},
    "braf": {"wild": 0, "mutated": 1},
    "lymphovascular": {"no": 0, "yes": 1},
    "sex": {"M": 0, "F": 1},
    "location": {"colon": 0, "rectum": 1},
    "age": None,
}


@dataclass
class AssociationRow:
    factor: str
    n: int
    rho: float = float("nan")
    p: float = float("nan")
    note: str = ""


def encode_factor(subject, factor):
    v = _value(subject, factor)
    if v is None:
        return None
    if isinstance(v, str) and factor in _ORDINAL and _ORDINAL[factor] is None:
        return None
    coding = _ORDINAL.get(factor)
    if coding is None:
        return float(v) if not isinstance(v, str) else None
    return coding.get(v)


def risk_factor_association(subjects, factors=None):
    """Spearman correlation of risk class (Low=0, Medium=1, High=2) with
    each ordinal-encoded clinical factor."""
    factors = list(factors or _ORDINAL)
    rows = []
    for f in factors:
        pairs = []
        for s in subjects:
            if s.risk_class is None:
                continue
            v = encode_factor(s, f)
            if v is not None:
                pairs.append((int(s.risk_class), v))
        row = AssociationRow(f, len(pairs))
        if len(pairs) < 3:
            row.note = "skipped: fewer than 3 observations"
        else:
            x, y = np.array(pairs, dtype=np.float64).T
            try:
                row.rho, row.p = spearman_test(x, y)
            except SurvivalError:
                row.note = "skipped: constant factor"
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# generic table writer


def write_rows(path, rows):
    """Write dataclass rows as CSV (floats in round-trip repr, NaN blank)."""
    rows = list(rows)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not rows:
            return
        names = [f.name for f in fields(rows[0])]
        extra = ["hr_text"] if isinstance(rows[0], ForestRow) else []
        w.writerow(names + extra)
        for r in rows:
            out = []
            for n in names + extra:
                v = getattr(r, n)
                if isinstance(v, (float, np.floating)):
                    out.append("" if math.isnan(v) else repr(float(v)))
                else:
                    out.append(v)
            w.writerow(out)
