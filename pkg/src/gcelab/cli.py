"""Command-line entry point: train, attack, evaluate, landscape, export-embeddings."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import attacks, config, data, landscape, models, training
from .losses import GceConfig, LossError
from .tensor import no_grad

logger = logging.getLogger("gcelab")

REPORT_HEADER = ["model_id", "loss", "alpha", "attack", "epsilon", "iterations", "budget",
                 "accuracy", "mean_l2", "samples", "seed", "dataset_checksum", "status"]

DEFAULT_ITERS = {"fgsm": 1, "bim": 10, "pgd": 40, "mim": 40, "jsma": 1, "cw": 1}


class CliError(Exception):
    """Bad input detected before any computation; exit code 2."""


def _sha8(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# train

def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    try:
        cfg = config.load(args.config, overrides)
        tcfg = config.train_config(cfg)
    except (config.ConfigError, training.TrainingError, LossError) as exc:
        raise CliError(str(exc)) from None

    train_set = data.load_dataset(cfg["data.dataset"], "train")
    test_set = data.load_dataset(cfg["data.dataset"], "test")
    if cfg["data.train_subset"]:
        train_set = data.subset(train_set, cfg["data.train_subset"], cfg["data.subset_seed"])
    if cfg["data.test_subset"]:
        test_set = data.subset(test_set, cfg["data.test_subset"], cfg["data.subset_seed"])
    spec = config.model_spec(cfg, train_set.images.shape[1:], max(train_set.num_classes, test_set.num_classes))

    run_id = f"{cfg.hash}-s{tcfg.seed}"
    run_dir = Path(cfg["output.dir"]) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "resolved.cfg").write_text(f"# config_hash = {cfg.hash}\n# seed = {tcfg.seed}\n" + cfg.text)

    params, log = training.train(spec, train_set, test_set, tcfg)
    meta = {"run_id": run_id, "config_hash": cfg.hash, "seed": tcfg.seed, "loss": tcfg.loss,
            "alpha": tcfg.gce.alpha, "adversarial": tcfg.adversarial,
            "dataset": cfg["data.dataset"], "dataset_checksum": train_set.checksum}
    ckpt = run_dir / "checkpoint.gct"
    models.save_checkpoint(ckpt, spec, params, meta)
    log.checkpoint = str(ckpt)
    log.write_csv(run_dir / "trainlog.csv")
    last = log.records[-1]
    print(f"{run_dir}  test_error={last.test_error:.2f}%")
    return 0


# attack

def _attack_config(args) -> attacks.AttackConfig:
    iters = args.iters if args.iters is not None else DEFAULT_ITERS[args.kind]
    return attacks.AttackConfig(
        kind=args.kind, epsilon=args.eps, iterations=iters, step_size=args.step, decay=args.decay,
        gamma=args.gamma, confidence=args.kappa, initial_constant=args.c0,
        binary_steps=args.binary_steps, max_opt_iterations=args.max_iter, learning_rate=args.cw_lr,
        targeted=args.targeted, target=args.target, loss_kind=args.loss, seed=args.seed)


def _budget(cfg: attacks.AttackConfig) -> str:
    if cfg.kind == "fgsm":
        return f"eps={cfg.epsilon}"
    if cfg.kind in ("bim", "pgd"):
        return f"eps={cfg.epsilon};iters={cfg.iterations};step={cfg.step}"
    if cfg.kind == "mim":
        return f"eps={cfg.epsilon};iters={cfg.iterations};decay={cfg.decay}"
    if cfg.kind == "jsma":
        return f"gamma={cfg.gamma}"
    return (f"kappa={cfg.confidence};c0={cfg.initial_constant};binary_steps={cfg.binary_steps};"
            f"max_iter={cfg.max_opt_iterations};targeted={cfg.targeted}")


def _mean_l2(result: attacks.AttackResult, clean_pred: np.ndarray):
    """Mean L2 distortion over samples that were correct and got flipped by the attack."""
    mask = result.success & (clean_pred == result.labels)
    return float(result.l2[mask].mean()) if mask.any() else None


def _eval_split(name: str, split: str, samples: int, subset_seed: int):
    ds = data.load_dataset(name, split)
    if samples and samples < len(ds):
        ds = data.subset(ds, samples, subset_seed)
    return ds


def _check_compatible(spec: models.ModelSpec, ds: data.Dataset, what: str) -> None:
    if tuple(ds.images.shape[1:]) != spec.input_shape or ds.num_classes > spec.num_classes:
        raise CliError(f"{what}: dataset images {ds.images.shape[1:]} with {ds.num_classes} classes "
                       f"do not match checkpoint spec {spec.input_shape} / {spec.num_classes} classes")


def _alpha_field(meta) -> str:
    """alpha only means something for GCE-trained models."""
    return _fmt(meta.get("alpha")) if meta.get("loss") == "gce" else ""


def _report_row(meta, model_id, cfg, result, clean_pred, seed, checksum) -> list:
    return [model_id, meta.get("loss", ""), _alpha_field(meta), cfg.kind,
            _fmt(cfg.epsilon) if cfg.kind in attacks.EPS_BOUNDED else "",
            cfg.iterations if cfg.kind in ("bim", "pgd", "mim") else "",
            _budget(cfg), _fmt(result.accuracy), _fmt(_mean_l2(result, clean_pred)),
            len(result.labels), seed, checksum, "ok"]


def cmd_attack(args) -> int:
    try:
        cfg = _attack_config(args)
        gce = GceConfig(alpha=args.alpha)
    except (attacks.AttackError, LossError) as exc:
        raise CliError(str(exc)) from None
    try:
        spec, params, meta = models.load_checkpoint(args.checkpoint)
    except (OSError, models.ContainerError) as exc:
        raise CliError(f"cannot load checkpoint: {exc}") from None
    ds = _eval_split(args.dataset, args.split, args.samples, args.subset_seed)
    _check_compatible(spec, ds, "attack")

    model = attacks.bind(spec, params)
    clean_pred = models.predict(spec, params, ds.images)
    result = attacks.run_attack(model, ds.images, ds.labels, cfg, gce)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = _sha8(json.dumps(asdict(cfg), sort_keys=True))
    model_id = meta.get("run_id", Path(args.checkpoint).stem)
    attacks.write_manifest(out / "manifest.csv", result)
    attacks.save_adversarial(out / "adversarial.gct", result, cfg,
                             {"model_id": model_id, "attack_hash": cfg_hash, "seed": cfg.seed,
                              "dataset_checksum": ds.checksum})
    report = out / "report.csv"
    new = not report.exists()
    with open(report, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(REPORT_HEADER)
        w.writerow(_report_row(meta, model_id, cfg, result, clean_pred, cfg.seed, ds.checksum))
    clean = 100.0 * float(np.mean(clean_pred == ds.labels))
    print(f"{cfg.kind} {_budget(cfg)}: accuracy {result.accuracy:.2f}% "
          f"(clean {clean:.2f}%, {len(ds)} samples, attack {cfg_hash}, seed {cfg.seed})")
    return 0


# evaluate

SUITE_ORDER = ("fgsm", "bim", "pgd", "mim", "jsma", "cw")


def suite_cells(suite: config.Resolved) -> list:
    """Expand a suite config into the ordered list of attack configs to run."""
    seed = suite["suite.seed"]
    unknown = [a for a in suite["suite.attacks"] if a not in SUITE_ORDER]
    if unknown:
        raise CliError(f"unknown attack(s) in suite.attacks: {unknown}")
    cells = []
    for kind in SUITE_ORDER:
        if kind not in suite["suite.attacks"]:
            continue
        if kind in attacks.EPS_BOUNDED:
            iters = 1 if kind == "fgsm" else suite[f"{kind}.iters"]
            decay = suite["mim.decay"] if kind == "mim" else 1.0
            cells += [attacks.AttackConfig(kind=kind, epsilon=e, iterations=iters, decay=decay, seed=seed)
                      for e in suite[f"{kind}.eps"]]
        elif kind == "jsma":
            cells += [attacks.AttackConfig(kind="jsma", gamma=g, seed=seed) for g in suite["jsma.gamma"]]
        else:
            cells += [attacks.AttackConfig(kind="cw", confidence=k, initial_constant=suite["cw.c0"],
                                           binary_steps=suite["cw.binary_steps"],
                                           max_opt_iterations=suite["cw.max_iter"],
                                           targeted=suite["cw.targeted"], seed=seed)
                      for k in suite["cw.kappa"]]
    return cells


def evaluate(checkpoints, suite: config.Resolved):
    """Run every (model, attack) cell; return (rows, failures, dataset)."""
    ds = _eval_split(suite["suite.dataset"], suite["suite.split"], suite["suite.samples"],
                     suite["suite.subset_seed"])
    cells = suite_cells(suite)
    rows, failures = [], 0
    for path in checkpoints:
        spec, params, meta = models.load_checkpoint(path)
        _check_compatible(spec, ds, str(path))
        model_id = meta.get("run_id", Path(path).stem)
        model = attacks.bind(spec, params)
        clean_pred = models.predict(spec, params, ds.images)
        if suite["suite.clean"]:
            acc = 100.0 * float(np.mean(clean_pred == ds.labels))
            rows.append([model_id, meta.get("loss", ""), _alpha_field(meta), "clean", "", "", "",
                         _fmt(acc), "", len(ds), suite["suite.seed"], ds.checksum, "ok"])
        for cfg in cells:
            try:
                result = attacks.run_attack(model, ds.images, ds.labels, cfg)
                rows.append(_report_row(meta, model_id, cfg, result, clean_pred, cfg.seed, ds.checksum))
                logger.info("%s %s %s: %.2f%%", model_id, cfg.kind, _budget(cfg), result.accuracy)
            except Exception as exc:  # a failed cell is reported, the matrix continues
                failures += 1
                logger.error("%s %s failed: %s", model_id, cfg.kind, exc)
                rows.append([model_id, meta.get("loss", ""), _alpha_field(meta), cfg.kind,
                             _fmt(cfg.epsilon), cfg.iterations, _budget(cfg), "", "", len(ds),
                             cfg.seed, ds.checksum, f"failed: {type(exc).__name__}: {exc}"])
    return rows, failures, ds


def write_report(out: Path, rows, meta_lines) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        for line in meta_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        w.writerows(rows)
    (out / "report.txt").write_text(text_table(rows))


def text_table(rows) -> str:
    """Aligned rendering of the report CSV (accuracy and L2 rounded for reading)."""
    cols = ["model_id", "loss", "alpha", "attack", "budget", "accuracy", "mean_l2", "samples", "status"]
    idx = [REPORT_HEADER.index(c) for c in cols]

    def cell(row, i):
        v = row[i]
        name = REPORT_HEADER[i]
        if name in ("accuracy", "mean_l2", "alpha") and v not in ("", None):
            return f"{float(v):.2f}" if name != "alpha" else f"{float(v):.4g}"
        return str(v)

    table = [cols] + [[cell(r, i) for i in idx] for r in rows]
    widths = [max(len(r[c]) for r in table) for c in range(len(cols))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in table]
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    try:
        suite = config.load(args.suite, args.set or [], schema=config.SUITE_SCHEMA)
        suite_cells(suite)
    except (config.ConfigError, attacks.AttackError) as exc:
        raise CliError(str(exc)) from None
    for path in args.checkpoints:
        if not Path(path).exists():
            raise CliError(f"checkpoint not found: {path}")
    rows, failures, ds = evaluate(args.checkpoints, suite)
    model_hashes = []
    for path in args.checkpoints:
        _, _, meta = models.load_checkpoint(path)
        model_hashes.append(f"{meta.get('run_id', Path(path).stem)}:{meta.get('config_hash', '')}")
    meta_lines = [f"suite_hash = {suite.hash}", f"seed = {suite['suite.seed']}",
                  f"dataset = {suite['suite.dataset']}/{suite['suite.split']} checksum {ds.checksum}",
                  f"models = {' '.join(model_hashes)}"]
    write_report(Path(args.out), rows, meta_lines)
    sys.stdout.write(text_table(rows))
    if failures:
        print(f"{failures} cell(s) failed", file=sys.stderr)
        return 1
    return 0


# landscape

def _alpha_list(text: str) -> list:
    try:
        alphas = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise CliError(f"bad --alpha list {text!r}") from None
    if not alphas:
        raise CliError("--alpha needs at least one value")
    for a in alphas:
        if not 0.0 < a <= 1.0:
            raise CliError(f"alpha must lie in (0, 1], got {a}")
    return alphas


def cmd_landscape(args) -> int:
    alphas = _alpha_list(args.alpha)
    if args.loss not in landscape.LANDSCAPE_LOSSES:
        raise CliError(f"unknown loss {args.loss!r}")
    if args.resolution < 3 or args.profile_resolution < 10:
        raise CliError("--resolution must be >= 3 and --profile-resolution >= 10")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checks = []

    def record(name, ok, detail):
        checks.append(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")

    for a in alphas:
        sheet = landscape.evaluate_sheet(args.loss, a, args.resolution)
        stem = f"sheet_{args.loss}_alpha{a:g}"
        sheet.write_csv(out / f"{stem}.csv")
        sheet.write_pgm(out / f"{stem}.pgm")
        record(f"symmetric[alpha={a:g}]", sheet.is_symmetric(), "loss(p1,p2) == loss(p2,p1) bitwise")
        valley = landscape.valley_flatness_check(args.loss, args.resolution, a)
        if args.loss == "complement_entropy":
            record(f"valley_flat[alpha={a:g}]", valley.flat, f"max deviation {valley.max_deviation:.3e}")
            record(f"valley_at_minimum[alpha={a:g}]", landscape.valley_points_at_minimum(sheet),
                   "every X=Y grid point within 1e-9 of the minimum")
        else:
            record(f"valley_decreasing_toward_origin[alpha={a:g}]", valley.decreasing_toward_origin,
                   f"max deviation {valley.max_deviation:.3e}")
            i, j = sheet.argmin()
            record(f"minimum_in_shaded[alpha={a:g}]", sheet.minimum_is_shaded(),
                   f"argmin p1={sheet.grid.p1[i, j]:.4g} p2={sheet.grid.p2[i, j]:.4g}")
            checks.append(f"basin_fraction[alpha={a:g}]: {sheet.basin_fraction():.6f} "
                          f"(tolerance {landscape.BASIN_TOLERANCE})")

    curves = landscape.profile_equal_incorrect(args.loss, alphas, args.profile_resolution)
    with open(out / f"profile_{args.loss}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p0"] + [f"alpha={a:g}" for a in alphas])
        p0 = curves[alphas[0]][0]
        for r in range(len(p0)):
            w.writerow([repr(float(p0[r]))] + [repr(float(curves[a][1][r])) for a in alphas])
    if args.loss in ("gce", "normalized_gce") and len(alphas) > 1:
        by_alpha = sorted(alphas)
        first = [float(curves[a][1][0]) for a in by_alpha]
        record("profile_first_point_increasing_in_alpha", all(np.diff(first) > 0),
               " < ".join(f"{v:.6f}" for v in first))
        slopes = [abs(landscape.profile_slope(args.loss, a, 0.95)) for a in by_alpha]
        record("slope_at_0.95_increasing_in_alpha", all(np.diff(slopes) > 0),
               " < ".join(f"{v:.6f}" for v in slopes))
    (out / "assertions.txt").write_text("\n".join(checks) + "\n")
    print(f"wrote {len(alphas)} sheet(s) and profile_{args.loss}.csv to {out}")
    return 0


# export-embeddings

def cmd_export(args) -> int:
    try:
        spec, params, meta = models.load_checkpoint(args.checkpoint)
    except (OSError, models.ContainerError) as exc:
        raise CliError(f"cannot load checkpoint: {exc}") from None
    ds = data.load_dataset(args.dataset, args.split)
    _check_compatible(spec, ds, "export-embeddings")
    n = min(args.limit, len(ds)) if args.limit else len(ds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        header_done = False
        for start in range(0, n, 500):
            with no_grad():
                feats = models.penultimate_features(spec, params, ds.images[start:min(n, start + 500)]).data
            if not header_done:
                w.writerow(["id", "label"] + [f"f{i}" for i in range(feats.shape[1])])
                header_done = True
            for r, row in enumerate(feats):
                sid = start + r
                w.writerow([sid, int(ds.labels[sid])] + [repr(float(v)) for v in row])
    print(f"wrote {n} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcelab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output root (default from config, 'out')")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="attack a checkpoint on a dataset split")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--kind", required=True, choices=attacks.ATTACK_KINDS)
    a.add_argument("--eps", type=float, default=0.1)
    a.add_argument("--iters", type=int, help="iterations (default 1 fgsm, 10 bim, 40 pgd/mim)")
    a.add_argument("--step", type=float, help="per-iteration step (default eps/iters)")
    a.add_argument("--decay", type=float, default=1.0, help="mim momentum decay")
    a.add_argument("--gamma", type=float, default=0.1, help="jsma fraction of pixels")
    a.add_argument("--kappa", type=float, default=0.0, help="cw confidence")
    a.add_argument("--c0", type=float, default=1e-3, help="cw initial constant")
    a.add_argument("--binary-steps", type=int, default=9)
    a.add_argument("--max-iter", type=int, default=1000)
    a.add_argument("--cw-lr", type=float, default=0.01)
    a.add_argument("--targeted", action="store_true")
    a.add_argument("--target", type=int)
    a.add_argument("--loss", default="xe", choices=("xe", "gce"), help="loss whose gradient the attack follows")
    a.add_argument("--alpha", type=float, default=1.0 / 3.0, help="alpha when --loss gce")
    a.add_argument("--dataset", default="mnist")
    a.add_argument("--split", default="test")
    a.add_argument("--samples", type=int, default=1000, help="seeded subset size (0 = whole split)")
    a.add_argument("--subset-seed", type=int, default=0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="attack_out")
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("evaluate", help="run an attack suite over several checkpoints")
    e.add_argument("--checkpoints", nargs="+", required=True)
    e.add_argument("--suite", required=True)
    e.add_argument("--set", action="append", metavar="KEY=VALUE")
    e.add_argument("--out", default="eval_out")
    e.set_defaults(func=cmd_evaluate)

    la = sub.add_parser("landscape", help="three-class loss landscape sheets and profiles")
    la.add_argument("--loss", required=True, choices=landscape.LANDSCAPE_LOSSES)
    la.add_argument("--alpha", default="1,0.333,0.1")
    la.add_argument("--resolution", type=int, default=201)
    la.add_argument("--profile-resolution", type=int, default=100)
    la.add_argument("--out", default="landscape_out")
    la.set_defaults(func=cmd_landscape)

    x = sub.add_parser("export-embeddings", help="write penultimate-layer features to CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--dataset", default="mnist")
    x.add_argument("--split", default="test")
    x.add_argument("--limit", type=int, default=0, help="only the first N samples (0 = all)")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"gcelab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, data.DataFormatError, models.ContainerError,
            training.TrainingError, LossError) as exc:
        print(f"gcelab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
