"""Command-line entry point: ``seqrisk <command> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
Every command that writes files also writes the resolved ``config.json`` next
to them; passing it back with ``--config`` replays the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as C
from . import plotting
from .attention import count_macs, count_params, mac_breakdown, top_attention_points
from .cohort import describe, generate, load_manifest
from .evaluation import HORIZONS, auc, bootstrap_ci, delong_test, horizon_aucs, roc_points, split
from .io import FormatError
from .model import RiskModel, load_model, save_model
from .pipeline import RawCohort, cohort_radiomics, load_cohort, prepare
from .preprocess import VIEWS
from .radiomics import FEATURE_NAMES, N_FEATURES
from .training import filter_controls, pseudo_label, train, two_stage_finetune

log = logging.getLogger("seqrisk")

HORIZON_NAMES = ("auc_1y", "auc_2y", "auc_gt2y")


# -- helpers -----------------------------------------------------------------------------
def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dataset_hash(root) -> str:
    """SHA-256 over the manifest plus relative path and bytes of every image."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted((root / "images").rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    h.update((root / "manifest.json").read_bytes())
    return h.hexdigest()


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_raw(run: Path) -> RawCohort:
    z = np.load(_require(run / "preprocess" / "cohort.npz", "preprocessed cohort (run `preprocess` first)"))
    return RawCohort(list(z["ids"]), z["videos"], z["masks"], z["age"], z["label"], z["category"])


def _load_features(run: Path) -> np.ndarray:
    return np.load(_require(run / "features" / "radiomics.npy", "radiomics (run `extract-features` first)"))


def _split_indices(raw: RawCohort, seed: int, fold: int | None):
    plan = split(raw.ids, raw.label, seed=seed)
    index = {pid: i for i, pid in enumerate(raw.ids)}
    test = np.array(sorted(index[p] for p in plan.test))
    if fold is None:
        train_idx = np.array(sorted(index[p] for f in plan.folds for p in f))
        val = np.array([], dtype=int)
    else:
        if not 0 <= fold < len(plan.folds):
            raise ValueError(f"fold must be in [0, {len(plan.folds) - 1}], got {fold}")
        train_idx = np.array(sorted(index[p] for k, f in enumerate(plan.folds) if k != fold for p in f))
        val = np.array(sorted(index[p] for p in plan.folds[fold]))
    return plan, train_idx, val, test


def _prediction_rows(model: RiskModel, data, idx):
    sub = data.subset(idx)
    y, views = model.predict(sub)
    return [[pid, f"{s:.17g}", int(l), int(c)] + [f"{v:.17g}" for v in vs]
            for pid, s, l, c, vs in zip(sub.ids, y, sub.label, sub.category, views)]


PRED_HEADER = ["patient_id", "score", "label", "category"] + [f"score_{v.lower()}" for v in VIEWS]


def read_predictions(path):
    path = _require(Path(path), "predictions file")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    missing = {"patient_id", "score", "label", "category"} - set(rows[0] if rows else {})
    if not rows or missing:
        raise FormatError(f"{path}: needs columns patient_id, score, label, category (missing {sorted(missing)})")
    ids = [r["patient_id"] for r in rows]
    scores = np.array([float(r["score"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    cats = np.array([int(r["category"]) for r in rows])
    if np.any((cats == 0) != (labels == 0)):
        raise FormatError(f"{path}: category 0 must coincide with label 0")
    return ids, scores, labels, cats


def _checkpointer(out: Path, every: int, prefix: str):
    def hook(epoch, model, _log):
        if every and epoch % every == 0:
            save_model(out / "checkpoints" / f"{prefix}_epoch{epoch:03d}", model)
    return hook


def _eval_block(scores, labels, cats, cfg) -> dict:
    e = cfg["eval"]
    out = {}
    for name, value, group in zip(HORIZON_NAMES, horizon_aucs(scores, cats, e.horizon_mode),
                                  _horizon_groups(e.horizon_mode)):
        if value is None:
            out[name] = None
            continue
        keep = (cats == 0) | np.isin(cats, list(group))
        lo, hi = bootstrap_ci(scores[keep], np.isin(cats[keep], list(group)).astype(int), e.n_boot, e.alpha, e.seed)
        out[name] = {"auc": value, "ci": [lo, hi]}
    return out


def _horizon_groups(mode):
    return HORIZONS[mode]


# -- commands ----------------------------------------------------------------------------
def cmd_gen_synthetic(args, cfg):
    out = Path(args.out)
    man = generate(cfg["cohort"], out)
    C.save(cfg, out / "config.json")
    summ = describe(man)
    _write_json(out / "summary.json", summ)
    plotting.screenings_histogram(summ["screenings_histogram"], out / "screenings.png")
    print(json.dumps({"out": str(out), "dataset_sha256": dataset_hash(out), **summ}, indent=1))


def cmd_describe(args, cfg):
    man = load_manifest(args.data)
    summ = describe(man)
    if args.out:
        out = Path(args.out)
        _write_json(out / "summary.json", summ)
        plotting.screenings_histogram(summ["screenings_histogram"], out / "screenings.png")
    print(json.dumps(summ, indent=1))


def cmd_preprocess(args, cfg):
    data_dir = Path(args.data)
    man = load_manifest(data_dir)
    d = cfg["data"]
    raw = load_cohort(man, data_dir, size=d.image_size, frames=d.frames, fill=d.fill)
    out = Path(args.run) / "preprocess"
    out.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out / "cohort.npz", ids=np.array(raw.ids), videos=raw.videos, masks=raw.masks, age=raw.age,
                        label=raw.label, category=raw.category)
    C.save(cfg, out / "config.json")
    print(f"preprocessed {len(raw)} patients -> {out / 'cohort.npz'} (videos {raw.videos.shape})")


def cmd_extract_features(args, cfg):
    run = Path(args.run)
    raw = _load_raw(run)
    t0 = time.perf_counter()
    feats = cohort_radiomics(raw, cfg["data"].n_bins, workers=cfg["runtime"].workers)
    out = run / "features"
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "radiomics.npy", feats)
    names = list(FEATURE_NAMES)
    _write_csv(out / "radiomics.csv", ["patient_id", "view"] + names,
               [[pid, v] + [f"{x:.10g}" for x in feats[i, j]] for i, pid in enumerate(raw.ids)
                for j, v in enumerate(VIEWS)])
    C.save(cfg, out / "config.json")
    print(f"{N_FEATURES} features x {len(VIEWS)} views for {len(raw)} patients in {time.perf_counter() - t0:.1f}s")


def _prepared(run: Path, cfg, fold):
    raw = _load_raw(run)
    feats = _load_features(run)
    if len(feats) != len(raw):
        raise ValueError(f"radiomics cover {len(feats)} patients but the cohort has {len(raw)}")
    plan, train_idx, val_idx, test_idx = _split_indices(raw, cfg["train"].seed, fold)
    data, stats, scaler = prepare(raw, feats, train_idx, fold_id=-1 if fold is None else fold)
    return raw, data, plan, train_idx, val_idx, test_idx


def _predict_and_report(model, data, parts: dict, out: Path, cfg, title: str) -> dict:
    report, curves = {}, {}
    for name, idx in parts.items():
        if len(idx) == 0:
            continue
        rows = _prediction_rows(model, data, idx)
        _write_csv(out / f"predictions_{name}.csv", PRED_HEADER, rows)
        scores = np.array([float(r[1]) for r in rows])
        labels = data.label[idx]
        if labels.min() != labels.max():
            report[name] = auc(scores, labels)
            curves[name] = (roc_points(scores, labels), report[name])
    if curves:
        plotting.roc_curves(curves, out / "roc.png", title=title)
    return report


def cmd_train(args, cfg):
    run = Path(args.run)
    raw, data, plan, train_idx, val_idx, test_idx = _prepared(run, cfg, args.fold)
    out = run / "train"
    out.mkdir(parents=True, exist_ok=True)
    C.save(cfg, out / "config.json")
    _write_json(out / "split.json", {"seed": plan.seed, "test": plan.test, "folds": plan.folds, "fold": args.fold})
    model = RiskModel(C.model_config(cfg), seed=cfg["train"].seed)
    t0 = time.perf_counter()
    lg = train(model, data.subset(train_idx), cfg["train"], "hard",
               on_epoch_end=_checkpointer(out, cfg["runtime"].checkpoint_every, "train"))
    save_model(out / "weights", model)
    _write_csv(out / "log.csv", ["epoch", "split", "loss"],
               [[i + 1, "train", f"{v:.10g}"] for i, v in enumerate(lg.epoch_loss)])
    plotting.loss_curves({"train": lg.epoch_loss}, out / "loss.png")
    report = _predict_and_report(model, data, {"train": train_idx, "val": val_idx, "test": test_idx}, out, cfg,
                                 "trained model")
    _write_json(out / "metrics.json", {"auc": report, "seconds": time.perf_counter() - t0, "steps": lg.steps})
    print(json.dumps({"auc": report, "final_loss": lg.epoch_loss[-1] if lg.epoch_loss else None}, indent=1))


def cmd_finetune_baf(args, cfg):
    run = Path(args.run)
    trained = load_model(_require(run / "train" / "weights", "trained model (run `train` first)"))
    raw, data, plan, train_idx, val_idx, test_idx = _prepared(run, cfg, args.fold)
    out = run / "finetune"
    out.mkdir(parents=True, exist_ok=True)
    C.save(cfg, out / "config.json")
    tc = cfg["train"]
    d_s = pseudo_label(trained, data.subset(train_idx))
    _write_csv(out / "pseudo_labels.csv", ["patient_id", "label", "y_soft", "gamma"],
               [[p, int(l), f"{y:.17g}", f"{g:.17g}"] for p, l, y, g in zip(d_s.ids, d_s.label, d_s.y_soft, d_s.gamma)])
    d_f, p_t = filter_controls(d_s, tc.filter_percentile)
    _write_json(out / "filter.json", {"percentile": tc.filter_percentile, "P_T": p_t, "n_s": len(d_s),
                                      "n_f": len(d_f), "cases": int(d_s.label.sum()),
                                      "gamma_mean_case": float(d_s.gamma[d_s.label == 1].mean()),
                                      "gamma_mean_control": float(d_s.gamma[d_s.label == 0].mean())})
    if tc.stage1_from_trained:
        model = trained
    else:
        model = RiskModel(C.model_config(cfg), seed=tc.seed)
        model.calibrate(data.subset(train_idx), seed=tc.seed)
    stage1 = {}

    def after_stage1(m):
        save_model(out / "stage1_weights", m)
        stage1.update(_predict_and_report(m, data, {"test": test_idx, "val": val_idx}, out / "stage1", cfg,
                                          "after stage 1"))

    model, logs = two_stage_finetune(model, d_s, tc, after_stage1=after_stage1,
                                     on_epoch_end=_checkpointer(out, cfg["runtime"].checkpoint_every, "finetune"))
    save_model(out / "weights", model)
    rows = [[i + 1, lg.stage, f"{v:.10g}"] for lg in logs for i, v in enumerate(lg.epoch_loss)]
    _write_csv(out / "log.csv", ["epoch", "split", "loss"], rows)
    plotting.loss_curves({lg.stage: lg.epoch_loss for lg in logs}, out / "loss.png")
    report = _predict_and_report(model, data, {"train": train_idx, "val": val_idx, "test": test_idx}, out, cfg,
                                 "after two-stage finetuning")
    _write_json(out / "metrics.json", {"auc": report, "stage1_auc": stage1, "P_T": p_t, "kept": len(d_f),
                                       "of": len(d_s)})
    print(json.dumps({"auc": report, "stage1_auc": stage1, "P_T": p_t, "kept": f"{len(d_f)}/{len(d_s)}"}, indent=1))


def cmd_eval(args, cfg):
    out = Path(args.out)
    ids, scores, labels, cats = read_predictions(args.predictions)
    report = _eval_block(scores, labels, cats, cfg)
    report["horizon_mode"] = cfg["eval"].horizon_mode
    curves = {}
    for name, group in zip(HORIZON_NAMES, _horizon_groups(cfg["eval"].horizon_mode)):
        if report[name] is None:
            continue
        keep = (cats == 0) | np.isin(cats, list(group))
        pts = roc_points(scores[keep], np.isin(cats[keep], list(group)).astype(int))
        _write_csv(out / f"roc_{name[4:]}.csv", ["fpr", "tpr"], pts)
        curves[name[4:]] = (pts, report[name]["auc"])
    if args.compare:
        ids_b, scores_b, labels_b, _ = read_predictions(args.compare)
        order = {p: i for i, p in enumerate(ids_b)}
        if set(order) != set(ids) or np.any(labels_b[[order[p] for p in ids]] != labels):
            raise FormatError("comparison file must cover the same patients with the same labels")
        b = scores_b[[order[p] for p in ids]]
        auc_a, auc_b, p = delong_test(scores, b, labels)
        report["delong"] = {"auc_a": auc_a, "auc_b": auc_b, "p_value": p}
    if curves:
        plotting.roc_curves(curves, out / "roc.png", title="ROC by horizon")
    _write_json(out / "report.json", report)
    C.save(cfg, out / "config.json")
    print(json.dumps(report, indent=1))


def cmd_bench_attention(args, cfg):
    out = Path(args.out)
    C_, Cb = args.channels, args.c_b
    ns = args.n
    rows = []
    for n in ns:
        s, nl = count_macs("shift", C_, Cb, n), count_macs("nonlocal", C_, Cb, n)
        rows.append([n, s, nl, nl / s])
    params = {"shift": count_params("shift", C_, Cb), "nonlocal": count_params("nonlocal", C_, Cb)}
    _write_csv(out / "macs.csv", ["n", "shift_macs", "nonlocal_macs", "ratio"], rows)
    report = {"channels": C_, "c_b": Cb, "params": params,
              "macs": {str(n): {"shift": mac_breakdown("shift", C_, Cb, n),
                                "nonlocal": mac_breakdown("nonlocal", C_, Cb, n)} for n in ns}}
    _write_json(out / "bench.json", report)
    plotting.mac_scaling(ns, [r[1] for r in rows], [r[2] for r in rows], out / "macs.png")
    C.save(cfg, out / "config.json")
    print(f"params: additive {params['shift']}  non-local {params['nonlocal']}  (C={C_}, C_b={Cb})")
    for n, s, nl, ratio in rows:
        print(f"n={n:>6}  additive {s:>14,}  non-local {nl:>16,}  ratio {ratio:8.2f}")


def cmd_export_attention(args, cfg):
    run = Path(args.run)
    model = load_model(_require(run / args.stage / "weights", f"{args.stage} weights"))
    if model.config.backbone.shift_layer is None:
        raise ValueError("the model has no additive attention block (train with --shift-layer 1 or 2)")
    raw = _load_raw(run)
    feats = _load_features(run)
    if args.patient not in raw.ids:
        raise ValueError(f"unknown patient {args.patient!r}")
    i = raw.ids.index(args.patient)
    _, train_idx, _, _ = _split_indices(raw, cfg["train"].seed, args.fold)
    data, _, _ = prepare(raw, feats, train_idx)
    out = Path(args.out)
    rows = []
    for j, view in enumerate(VIEWS):
        model.backbone(data.videos[i, j][None])
        state, (T, H, W) = model.backbone.last_attention
        alpha = np.asarray(state.alpha).reshape(T, H, W)
        for rank, (t, y, x, w) in enumerate(top_attention_points(state, args.k, (T, H, W)), start=1):
            rows.append([view, rank, t, y, x, f"{w:.10g}"])
        pts = [(y, x) for t, y, x, _ in top_attention_points(state, args.k, (T, H, W)) if t == 0]
        plotting.attention_map(raw.videos[i, j, 0], alpha[0], out / f"attention_{view}.png", pts,
                               title=f"{args.patient} {view}")
    _write_csv(out / "top_points.csv", ["view", "rank", "t", "y", "x", "alpha"], rows)
    C.save(cfg, out / "config.json")
    print(f"wrote attention maps and top-{args.k} points for {args.patient} to {out}")


def cmd_grad_check(args, cfg):
    from .gradcheck import run_all
    results = run_all()
    worst = 0.0
    for name, err in results.items():
        print(f"{name:<34} max rel err {err:.3e}")
        worst = max(worst, err)
    if args.out:
        _write_json(Path(args.out) / "grad_check.json", results)
    print(f"worst {worst:.3e} ({'pass' if worst < args.tol else 'FAIL'} at tol {args.tol:g})")
    if worst >= args.tol:
        raise RuntimeError(f"gradient check failed: worst relative error {worst:.3e}")


# -- parser ------------------------------------------------------------------------------
COMMANDS = {
    "gen-synthetic": (cmd_gen_synthetic, ["cohort"], "generate a synthetic four-view cohort"),
    "describe": (cmd_describe, [], "summarize a cohort manifest"),
    "preprocess": (cmd_preprocess, ["data"], "segment, resize and stack screenings"),
    "extract-features": (cmd_extract_features, ["data", "runtime"], "radiomics for every view"),
    "train": (cmd_train, ["backbone", "shift", "model", "train", "runtime"], "train the risk model"),
    "finetune-baf": (cmd_finetune_baf, ["backbone", "shift", "model", "train", "runtime"],
                     "pseudo-label, filter asymmetric controls and retrain in two stages"),
    "eval": (cmd_eval, ["eval"], "horizon AUCs with bootstrap intervals, ROC export, DeLong comparison"),
    "bench-attention": (cmd_bench_attention, [], "parameter and MAC counts of the attention blocks"),
    "export-attention": (cmd_export_attention, ["train"], "attention maps and top points for one patient"),
    "grad-check": (cmd_grad_check, [], "finite-difference checks of every differentiable op"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqrisk", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, sections, text) in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", help="JSON config file (flags override it)")
        if name == "gen-synthetic":
            sp.add_argument("--out", required=True, help="output directory for images and manifest")
        elif name == "describe":
            sp.add_argument("--data", required=True, help="cohort directory or manifest.json")
            sp.add_argument("--out", help="also write summary.json and a histogram here")
        elif name == "preprocess":
            sp.add_argument("--data", required=True, help="cohort directory or manifest.json")
            sp.add_argument("--run", required=True, help="run directory")
        elif name in ("extract-features",):
            sp.add_argument("--run", required=True, help="run directory")
        elif name in ("train", "finetune-baf"):
            sp.add_argument("--run", required=True, help="run directory")
            sp.add_argument("--fold", type=int, help="hold out this cross-validation fold (0-4) as validation")
        elif name == "eval":
            sp.add_argument("--predictions", required=True, help="CSV with patient_id, score, label, category")
            sp.add_argument("--compare", help="second predictions CSV for a paired DeLong test")
            sp.add_argument("--out", required=True, help="report directory")
        elif name == "bench-attention":
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--channels", type=int, default=64, help="input channels C (default: 64)")
            sp.add_argument("--c-b", type=int, default=32, help="bottleneck channels C_b (default: 32)")
            sp.add_argument("--n", type=lambda s: [int(t) for t in s.split(",")], default=[1024, 2048, 4096],
                            help="comma-separated position counts (default: 1024,2048,4096)")
        elif name == "export-attention":
            sp.add_argument("--run", required=True, help="run directory")
            sp.add_argument("--patient", required=True, help="patient id")
            sp.add_argument("--stage", choices=["train", "finetune"], default="train",
                            help="which weights to use (default: train)")
            sp.add_argument("--fold", type=int, help="fold used when the model was trained")
            sp.add_argument("--k", type=int, default=10, help="number of top points (default: 10)")
            sp.add_argument("--out", required=True, help="output directory")
        elif name == "grad-check":
            sp.add_argument("--tol", type=float, default=1e-6, help="pass threshold (default: 1e-6)")
            sp.add_argument("--out", help="also write grad_check.json here")
        C.add_flags(sp, sections)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(asctime)s %(name)s %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = C.resolve(args)
        func(args, cfg)
    except (C.ConfigError, FormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
