"""``crcrisk`` command line: preprocess, train, stratify, analyze, simulate.

Exit codes: 0 success, 2 missing input, 3 schema error, 4 invalid config,
1 anything else. Every option may also be given in a JSON ``--config`` file
under its long-option name (dashes or underscores); flags on the command
line win over the file.
"""

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import cohort, mil, stratify, synth, tiles
from .survival import Observation, SurvivalError, concordance_arrays
from .tissue import TissueClass, load_tissue_map

log = logging.getLogger("crcrisk")

EXIT_OK, EXIT_OTHER, EXIT_MISSING, EXIT_SCHEMA, EXIT_CONFIG = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


class MissingInput(FileNotFoundError):
    pass


DEFAULTS = {
    "seed": 0,
    "out": ".",
    "threads": 1,
    "k_folds": 5,
    "train_fraction": 0.8,
    "lr": 0.01,
    "epochs": 500,
    "lam": mil.L2_PENALTY,
    "alpha": 1.0,
    "od_threshold": 0.15,
}


def _existing(path, what="input"):
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{what} not found: {p}")
    return p


def _need(args, name):
    v = getattr(args, name, None)
    if v is None or v == []:
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    return v


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args):
    images = [_existing(p) for p in _need(args, "images")]
    if args.mask and len(images) != 1:
        raise ConfigError("--mask applies to a single image; use --mask-dir for several")
    out = Path(args.out)
    tile_dir = out / "tiles"
    tile_dir.mkdir(parents=True, exist_ok=True)
    target = tiles.DEFAULT_TARGET
    if args.target:
        target = tiles.estimate_stains(tiles.load_png(_existing(args.target)), args.alpha, args.od_threshold)
    tmap = load_tissue_map(_existing(args.tissue_map)) if args.tissue_map else None

    rows = []
    for path in images:
        slide = path.stem
        try:
            img = tiles.load_png(path)
        except OSError as exc:
            raise ValueError(f"unreadable image {path}: {exc}") from None
        grid = tiles.tile_grid(img)
        shape = tiles.grid_shape(img)
        if args.mask:
            fg = tiles.load_mask(_existing(args.mask), shape)
        elif args.mask_dir and (Path(args.mask_dir) / f"{slide}.png").exists():
            fg = tiles.load_mask(Path(args.mask_dir) / f"{slide}.png", shape)
        else:
            fg = tiles.foreground_mask(img, args.od_threshold)
        source = None
        if not args.no_normalize:
            try:
                source = tiles.estimate_stains(img, args.alpha, args.od_threshold)
            except tiles.StainEstimationError as exc:
                log.warning("%s: stain estimation failed (%s); tiles written unnormalized", slide, exc)
        for t in grid:
            keep = bool(fg[t.y // tiles.TILE_SIZE, t.x // tiles.TILE_SIZE])
            label = ""
            if tmap is not None:
                cls = tmap.get((slide, t.x, t.y))
                label = cls.name if cls is not None else ""
            rows.append((slide, t.x, t.y, int(keep), label))
            if keep:
                px = t.pixels if source is None else tiles.normalize_to(t.pixels, source, target)
                tiles.save_png(tile_dir / f"{slide}_{t.x}_{t.y}.png", px)
    header = ["slide_id", "tile_x", "tile_y", "foreground"] + (["class"] if tmap is not None else [])
    _write_csv(out / "manifest.csv", header, [r if tmap is not None else r[:4] for r in rows])
    print(f"{len(rows)} tiles from {len(images)} slide(s), {sum(r[3] for r in rows)} foreground")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_bags(paths):
    bags = []
    for p in paths:
        bags += mil.read_bags(_existing(p, "feature bags"))
    return bags


def _fold_c(bags_by_pid, obs, train_ids, test_ids, args):
    train = [i for i in train_ids if i in bags_by_pid]
    test = [i for i in test_ids if i in bags_by_pid]
    if not test or not any(obs[i].event for i in train):
        return float("nan")
    model = mil.train_mil([bags_by_pid[i] for i in train], [obs[i] for i in train], args.lr, args.epochs, args.seed, args.lam)
    risk = mil.predict_batch([bags_by_pid[i] for i in test], model)
    try:
        return concordance_arrays(risk, np.array([obs[i].time for i in test]), np.array([obs[i].event for i in test]))
    except SurvivalError:
        return float("nan")


def cmd_train(args):
    subjects = cohort.ingest_clinical(_existing(_need(args, "clinical"), "clinical CSV"))
    bags = _load_bags(_need(args, "bags"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obs = {s.patient_id: Observation(s.os_months, s.os_event) for s in subjects}
    train_side, valid_side = cohort.train_validate_split(subjects, args.train_fraction, args.seed)
    folds = cohort.stratified_folds(train_side, args.k_folds, args.seed)
    _write_csv(out / "split.csv", ["patient_id", "split", "fold"],
               [(s.patient_id, "train", folds[s.patient_id]) for s in train_side] +
               [(s.patient_id, "validation", "") for s in valid_side])

    wanted = [TissueClass.parse(t) for t in args.tissues] if args.tissues else list(TissueClass)
    by_tissue = {}
    for b in bags:
        if b.patient_id in obs:
            by_tissue.setdefault(b.tissue, {})[b.patient_id] = b
    report, cv = [], []
    train_ids = sorted(folds)
    for tissue in wanted:
        if tissue == TissueClass.BACK:
            continue
        pool = by_tissue.get(tissue)
        if not pool:
            if args.tissues:
                log.warning("tissue %s has no bags; omitted", tissue.name)
            continue
        have = [i for i in train_ids if i in pool]
        if not any(obs[i].event for i in have):
            raise SurvivalError(f"no events among training patients with {tissue.name} bags")
        jobs = [
            ([i for i in train_ids if folds[i] != k], [i for i in train_ids if folds[i] == k])
            for k in range(args.k_folds)
        ]
        with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
            cs = list(ex.map(lambda j: _fold_c(pool, obs, j[0], j[1], args), jobs))
        for k, c in enumerate(cs):
            report.append((tissue.name, str(k), _num(c)))
        good = [c for c in cs if not math.isnan(c)]
        mean = float(np.mean(good)) if good else float("nan")
        sd = float(np.std(good, ddof=1)) if len(good) > 1 else float("nan")
        report.append((tissue.name, "mean", _num(mean)))
        report.append((tissue.name, "sd", _num(sd)))
        model = mil.train_mil([pool[i] for i in have], [obs[i] for i in have], args.lr, args.epochs, args.seed, args.lam)
        model.save(out / f"model_{tissue.name}.json")
        if not math.isnan(mean):
            cv.append((tissue, mean))
    if not report:
        raise SurvivalError("no tissue had bags for clinical patients")
    _write_csv(out / "cv_report.csv", ["tissue", "fold", "c_index"], report)

    if args.tissues_for_ensemble:
        chosen = [TissueClass.parse(t) for t in args.tissues_for_ensemble]
        if len(chosen) != 2:
            raise ConfigError("tissues_for_ensemble needs exactly two tissues")
    elif len(cv) >= 2:
        chosen = stratify.select_top_tissues(cv, 2)
    else:
        chosen = [t for t, _ in cv]
    cmap = dict(cv)
    _write_csv(out / "selection.csv", ["rank", "tissue", "cv_c_index"],
               [(r + 1, t.name, _num(cmap.get(t))) for r, t in enumerate(chosen)])
    for t, c in sorted(cv, key=lambda tc: (-tc[1], int(tc[0]))):
        print(f"{t.name}: CV C-index {c:.3f}")
    print("selected: " + ", ".join(t.name for t in chosen))
    return EXIT_OK


# ---------------------------------------------------------------------------
# stratify


RISK_COLUMNS = ["patient_id", "tumor_score", "stroma_score", "tumor_bin", "stroma_bin", "risk_class"]


def cmd_stratify(args):
    m_t = mil.MILModel.load(_existing(_need(args, "tumor_model"), "model"))
    m_s = mil.MILModel.load(_existing(_need(args, "stroma_model"), "model"))
    if m_t.tissue == m_s.tissue:
        raise ConfigError("the two ensemble models must be for different tissues")
    bags = _load_bags(_need(args, "bags"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pids = sorted({b.patient_id for b in bags})
    scores = {}
    for model in (m_t, m_s):
        sel = [b for b in bags if b.tissue == model.tissue]
        if not sel:
            raise cohort.SchemaError(f"no bags for model tissue {model.tissue.name}", "tissue")
        scores[model.tissue] = dict(zip((b.patient_id for b in sel), mil.predict_batch(sel, model)))

    rows, excluded = [], []
    counts = {rc.name: 0 for rc in stratify.RiskClass}
    for pid in pids:
        st, ss = scores[m_t.tissue].get(pid), scores[m_s.tissue].get(pid)
        if st is None or ss is None:
            missing = [m.tissue.name for m, v in ((m_t, st), (m_s, ss)) if v is None]
            rows.append((pid, _num(st), _num(ss), "", "", "incomplete"))
            excluded.append((pid, "missing bag: " + "+".join(missing)))
            continue
        bt = stratify.binarize(st, m_t.train_median)
        bs = stratify.binarize(ss, m_s.train_median)
        rc = stratify.ensemble(bt, bs)
        counts[rc.name] += 1
        rows.append((pid, _num(st), _num(ss), bt.name, bs.name, rc.name))
    _write_csv(out / "risk.csv", RISK_COLUMNS, rows)
    _write_csv(out / "exclusions.csv", ["patient_id", "reason"], excluded)
    print(" ".join(f"{k}={v}" for k, v in counts.items()) + f" incomplete={len(excluded)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def read_risk(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in RISK_COLUMNS:
            if col not in (reader.fieldnames or []):
                raise cohort.SchemaError(f"risk CSV missing column {col!r}", col)
        out = {}
        for line, row in enumerate(reader, start=2):
            label = row["risk_class"].strip()
            if label == "incomplete":
                out[row["patient_id"]] = None
                continue
            try:
                out[row["patient_id"]] = stratify.RiskClass.parse(label)
            except ValueError:
                raise cohort.SchemaError(f"bad risk_class {label!r} at line {line}", "risk_class") from None
    return out


KM_STRATA = [None, "stage", "pT", "pN", "msi"]


def cmd_analyze(args):
    subjects = cohort.ingest_clinical(_existing(_need(args, "clinical"), "clinical CSV"))
    risk = read_risk(_existing(_need(args, "risk"), "risk CSV"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in subjects:
        s.risk_class = risk.get(s.patient_id)
    rated = [s for s in subjects if s.risk_class is not None]
    if not rated:
        raise SurvivalError("no clinical patient has a risk class")

    folds = None
    try:
        folds = cohort.stratified_folds(rated, args.k_folds, args.seed)
    except ValueError as exc:
        log.warning("C-index SD not computed: %s", exc)
    cohort.write_rows(out / "univariate.csv", cohort.univariate_table(rated, folds=folds or {}))
    try:
        cohort.write_rows(out / "multivariate.csv", cohort.multivariate_table(rated).rows)
    except SurvivalError as exc:
        _write_csv(out / "multivariate.csv", ["status"], [(f"not estimable: {exc}",)])

    forest = []
    for filt in ("any_chemo", "fu5_only"):
        for r in cohort.forest_chemo(rated, filt):
            forest.append((filt, r.risk_class, r.n_treated, r.n_untreated, _num(r.hr), _num(r.ci_low), _num(r.ci_high),
                           _num(r.p), _num(r.logrank_p), r.hr_text, _num(r.surv48_treated), _num(r.surv48_untreated), r.status))
    _write_csv(out / "forest.csv", ["treatment_filter", "risk_class", "n_treated", "n_untreated", "hr", "ci_low", "ci_high",
                                    "p", "logrank_p", "hr_text", "surv48_treated", "surv48_untreated", "status"], forest)

    for strat in KM_STRATA:
        name = "risk_class" if strat is None else f"risk_class_by_{strat}"
        cohort.write_km(out / f"km_{name}", cohort.km_export(rated, "risk_class", strat))
    cohort.write_rows(out / "associations.csv", cohort.risk_factor_association(rated))
    print(f"analyzed {len(rated)} patients ({len(subjects) - len(rated)} without a risk class)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

SIM_KEYS = {"n", "seed", "tissues", "tiles_range", "baseline_rate", "censor_rate", "noise_sigma"}


def cmd_simulate(args):
    try:
        spec = json.loads(_existing(_need(args, "spec"), "spec").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec is not valid JSON: {exc}") from None
    if not isinstance(spec, dict):
        raise ConfigError("spec must be a JSON object")
    unknown = set(spec) - SIM_KEYS
    if unknown:
        raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
    try:
        n = int(spec["n"])
        tissues = spec.get("tissues", {"TUM": 8.0, "STR": 4.0})
        fx = synth.generate_fixture(
            n,
            tissues,
            seed=int(spec.get("seed", args.seed)),
            tiles_range=tuple(int(v) for v in spec.get("tiles_range", (5, 20))),
            baseline_rate=float(spec.get("baseline_rate", 0.02)),
            censor_rate=float(spec.get("censor_rate", 0.01)),
            noise_sigma=float(spec.get("noise_sigma", 0.0)),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"invalid spec: {exc!r}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cohort.write_clinical(out / "clinical.csv", fx.subjects)
    mil.write_bags(out / "bags.fbag", fx.bags)
    _write_csv(out / "truth.csv", ["patient_id", "true_risk"], [(s.patient_id, _num(r)) for s, r in zip(fx.subjects, fx.true_risk)])
    print(f"simulated {n} patients, {len(fx.bags)} bags")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)

    p = argparse.ArgumentParser(prog="crcrisk", description=__doc__.split("\n")[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", parents=[common], help="tile, mask and stain-normalize slide PNGs")
    pre.add_argument("images", nargs="*")
    pre.add_argument("--mask", help="foreground mask PNG, one pixel per tile")
    pre.add_argument("--mask-dir", help="directory of <slide>.png masks")
    pre.add_argument("--target", help="PNG whose stains define the normalization target")
    pre.add_argument("--tissue-map", help="tissue map CSV to annotate the manifest")
    pre.add_argument("--no-normalize", action="store_true", default=None)
    pre.add_argument("--alpha", type=float)
    pre.add_argument("--od-threshold", type=float)

    tr = sub.add_parser("train", parents=[common], help="per-tissue MIL models with cross-validation")
    tr.add_argument("--clinical")
    tr.add_argument("--bags", nargs="+")
    tr.add_argument("--tissues", nargs="+")
    tr.add_argument("--tissues-for-ensemble", nargs=2)
    tr.add_argument("--k-folds", type=int)
    tr.add_argument("--train-fraction", type=float)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lam", "--lambda", dest="lam", type=float)

    st = sub.add_parser("stratify", parents=[common], help="three-level risk classes from two tissue models")
    st.add_argument("--tumor-model")
    st.add_argument("--stroma-model")
    st.add_argument("--bags", nargs="+")

    an = sub.add_parser("analyze", parents=[common], help="survival tables, forest rows, KM curves")
    an.add_argument("--clinical")
    an.add_argument("--risk")
    an.add_argument("--k-folds", type=int)

    sm = sub.add_parser("simulate", parents=[common], help="synthetic clinical CSV and feature bags")
    sm.add_argument("--spec")
    return p


def resolve(args):
    """Merge defaults < config file < command-line flags, then validate."""
    values = dict(DEFAULTS)
    if args.config:
        try:
            cfg = json.loads(_existing(args.config, "config").read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        for k, v in cfg.items():
            key = "lam" if k in ("lambda", "lam") else k.replace("-", "_")
            if key not in vars(args) and key not in DEFAULTS:
                raise ConfigError(f"unknown config field {k!r}")
            values[key] = v
    for k, v in vars(args).items():
        if v is not None:
            values[k] = v
        elif k not in values:
            values[k] = None
    ns = argparse.Namespace(**values)
    for key in ("bags", "images", "tissues"):
        if isinstance(getattr(ns, key, None), str):
            setattr(ns, key, [getattr(ns, key)])
    if not 0 < float(ns.train_fraction) < 1:
        raise ConfigError("train_fraction must lie strictly between 0 and 1")
    if int(ns.k_folds) < 2:
        raise ConfigError("k_folds must be >= 2")
    if int(ns.threads) < 1:
        raise ConfigError("threads must be >= 1")
    if int(ns.epochs) < 0 or float(ns.lr) <= 0 or float(ns.lam) < 0:
        raise ConfigError("epochs >= 0, lr > 0 and lambda >= 0 required")
    if int(ns.seed) < 0 or int(ns.seed) >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return ns


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "stratify": cmd_stratify,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        ns = resolve(args)
        return COMMANDS[ns.command](ns)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except cohort.SchemaError as exc:
        print(f"error: schema: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (SurvivalError, mil.DivergenceError, tiles.StainEstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    except ValueError as exc:
        # malformed bag / tissue-map / image files
        print(f"error: schema: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
