"""Experiment runner: ``bindelta {discretize,train,eval,ablate,selftest}``.

Configuration is one JSON document (``--config``); command-line flags override
its values. Unknown keys are rejected. Every run directory gets a
``manifest.json`` with the resolved config, its hash and the code version.

Exit codes: 0 ok, 1 usage error, 2 runtime error, 3 selftest failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, binning, data, metrics, models, selftest

log = logging.getLogger("bindelta")

OUT_ENV = "BINDELTA_OUT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "M_G+"
    K: int | None = None
    K_values: list = field(default_factory=lambda: [models.DEFAULT_K_PER_BIN, models.DEFAULT_K_SINGLE])
    alpha: float | None = None
    gamma: float | None = None
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    lr_decay: float = 0.95
    hidden: list = field(default_factory=lambda: [64, 32])
    delta_hidden: list | None = None
    clip_norm: float | None = None
    bin_selection: str = "teacher"
    warm_start_epochs: int = 1
    interpolated_median: bool = False
    val_fraction: float = 1 / 6
    synthetic: dict = field(default_factory=dict)
    csv: str | None = None
    feature_dim: int | None = None
    category_names: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    n_seeds: int = 3
    jobs: int = 1
    out: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        synth_known = {f.name for f in dataclasses.fields(data.SynthConfig)}
        bad = sorted(set(doc.get("synthetic", {})) - synth_known)
        if bad:
            raise UsageError(f"unknown synthetic keys: {', '.join(bad)}")
        sweep = doc.get("sweep", {})
        if sweep and (set(sweep) - {"K", "alpha"} or len(sweep) != 1):
            raise UsageError("sweep must have exactly one key, 'K' or 'alpha'")
        return cls(**doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        doc = self.to_dict()
        doc.pop("out")
        doc.pop("jobs")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def train_config(self, seed: int | None = None, **overrides) -> models.TrainConfig:
        cfg = models.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, lr_decay=self.lr_decay,
            seed=self.seed if seed is None else seed, alpha=self.alpha, K=self.K, gamma=self.gamma,
            hidden=tuple(self.hidden), delta_hidden=None if self.delta_hidden is None else tuple(self.delta_hidden),
            clip_norm=self.clip_norm, bin_selection=self.bin_selection,
            warm_start_epochs=self.warm_start_epochs, interpolated_median=self.interpolated_median,
        )
        return dataclasses.replace(cfg, **overrides)


def load_dataset(cfg: ExperimentConfig) -> data.Dataset:
    if cfg.csv:
        return data.load_csv(cfg.csv, cfg.feature_dim)
    return data.generate_synthetic(data.SynthConfig(**cfg.synthetic))


def category_names(cfg: ExperimentConfig) -> dict:
    return {int(k): v for k, v in cfg.category_names.items()}


def git_revision() -> str | None:
    head = Path(__file__).resolve().parents[2] / ".git" / "HEAD"
    try:
        ref = head.read_text().strip()
        if ref.startswith("ref: "):
            return (head.parent / ref[5:]).read_text().strip()
        return ref
    except OSError:
        return None


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, **extra) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "code_version": __version__,
        "git_revision": git_revision(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def output_dir(cfg: ExperimentConfig, command: str) -> Path:
    if cfg.out:
        out = Path(cfg.out)
    else:
        root = Path(os.environ.get(OUT_ENV, "runs"))
        out = root / f"{command}-{cfg.variant.replace('+', 'plus')}-{cfg.digest()[:10]}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_discretize(cfg: ExperimentConfig) -> int:
    out = output_dir(cfg, "discretize")
    ds = load_dataset(cfg)
    train_set, val_set = data.split(ds, cfg.val_fraction, cfg.seed)
    K_values = [cfg.K] if cfg.K is not None else list(cfg.K_values)
    if not K_values:
        raise UsageError("no K values requested")
    print(f"defaults: K={models.DEFAULT_K_SINGLE} for single-delta models, "
          f"K={models.DEFAULT_K_PER_BIN} for per-bin-delta models")
    rows = []
    for cat, tr in train_set.by_category().items():
        va = val_set.subset(val_set.categories == cat)
        for K in K_values:
            d = binning.kmeans_fit(tr.poses, int(K), seed=cfg.seed)
            d.save(out / f"dictionary_c{cat}_K{K}.json")
            for split_name, subset in (("train", tr), ("val", va)):
                if len(subset) == 0:
                    continue
                fl = binning.quantization_floor(d, subset.poses)
                rows.append({"category": cat, "K": int(K), "split": split_name, **fl})
                print(f"category {cat} K={K:<4d} {split_name:5s} floor median {fl['median']:7.2f} deg"
                      f"  mean {fl['mean']:7.2f} deg")
    (out / "floor.json").write_text(json.dumps(rows, indent=1))
    write_manifest(out, "discretize", cfg, K_values=K_values)
    return EXIT_OK


def _train_all(cfg: ExperimentConfig, train_set, val_set, seed: int, **overrides):
    """One model per category; returns ``(params by category, history rows, report)``."""
    tcfg = cfg.train_config(seed, **overrides)
    params, rows = {}, []
    preds = np.zeros_like(val_set.poses)
    for cat, tr in train_set.by_category().items():
        va_mask = val_set.categories == cat
        va = val_set.subset(va_mask)
        p, hist = models.train(cfg.variant, tr, va, tcfg)
        params[cat] = p
        rows += [{"category": cat, **r} for r in hist]
        if va_mask.any():
            preds[va_mask] = models.predict_pose(p, va.features)
    report = metrics.compute_metrics(preds, val_set.poses, val_set.categories, names=category_names(cfg),
                                     interpolate=cfg.interpolated_median,
                                     meta={"variant": cfg.variant, "seed": seed, **{k: str(v) for k, v in overrides.items()}})
    return params, rows, report


def _history_text(rows: list[dict]) -> str:
    fields = ("category",) + models.HISTORY_FIELDS
    lines = [",".join(fields)]
    for r in rows:
        lines.append(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in fields))
    return "\n".join(lines) + "\n"


def cmd_train(cfg: ExperimentConfig) -> int:
    out = output_dir(cfg, "train")
    ds = load_dataset(cfg)
    train_set, val_set = data.split(ds, cfg.val_fraction, cfg.seed)
    try:
        params, rows, report = _train_all(cfg, train_set, val_set, cfg.seed)
    except models.TrainingAborted as exc:
        bundle = out / "aborted"
        models.save_bundle(exc.params, bundle, {"aborted": str(exc)})
        (out / "history.csv").write_text(_history_text(exc.history))
        write_manifest(out, "train", cfg, aborted=str(exc))
        log.error("training diverged: %s; last good parameters saved to %s", exc, bundle)
        return EXIT_RUNTIME
    for cat, p in params.items():
        models.save_bundle(p, out / f"model_c{cat}", {"category": cat, "config_sha256": cfg.digest()})
    (out / "history.csv").write_text(_history_text(rows))
    metrics.emit_report(report, out / "report.json", "json")
    metrics.emit_report(report, out / "report.csv", "csv")
    write_manifest(out, "train", cfg, categories=sorted(params))
    print(metrics.report_csv(report), end="")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, bundle_root: str, split_name: str) -> int:
    root = Path(bundle_root)
    bundles = {int(p.name.split("_c")[-1]): models.load_bundle(p) for p in sorted(root.glob("model_c*"))}
    if not bundles:
        raise UsageError(f"no model bundles under {root}")
    ds = load_dataset(cfg)
    if split_name == "val":
        ds = data.split(ds, cfg.val_fraction, cfg.seed)[1]
    preds = np.zeros_like(ds.poses)
    for cat in np.unique(ds.categories):
        if int(cat) not in bundles:
            raise RuntimeError(f"no model for category {cat}")
        mask = ds.categories == cat
        preds[mask] = models.predict_pose(bundles[int(cat)], ds.features[mask])
    variant = next(iter(bundles.values())).variant.tag
    report = metrics.compute_metrics(preds, ds.poses, ds.categories, names=category_names(cfg),
                                     interpolate=cfg.interpolated_median, meta={"variant": variant, "split": split_name})
    out = output_dir(cfg, "eval")
    metrics.emit_report(report, out / "report.json", "json")
    metrics.emit_report(report, out / "report.csv", "csv")
    write_manifest(out, "eval", cfg, bundle=str(root), split=split_name)
    print(metrics.report_csv(report), end="")
    return EXIT_OK


def _sweep_point(args):
    cfg_dict, key, value, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    ds = load_dataset(cfg)
    train_set, val_set = data.split(ds, cfg.val_fraction, cfg.seed)
    override = {"K": int(value)} if key == "K" else {"alpha": float(value)}
    _, rows, report = _train_all(cfg, train_set, val_set, seed, **override)
    return key, value, seed, report, rows


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Train every (sweep value, seed) pair; results are grouped by sweep value in the order given."""
    if len(cfg.sweep) != 1:
        raise UsageError("ablate needs exactly one sweep: K or alpha")
    (key, values), = cfg.sweep.items()
    if not values:
        raise UsageError("empty sweep list")
    if cfg.n_seeds < 1:
        raise UsageError("n_seeds must be >= 1")
    jobs = [(cfg.to_dict(), key, v, cfg.seed + i) for v in values for i in range(cfg.n_seeds)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    table = []
    for v in values:
        reps = [r for (_, val, _, r, _) in results if val == v]
        med = np.array([r.med_err for r in reps])
        acc = np.array([r.acc for r in reps])
        mean_med = np.array([r.mean_med_err for r in reps])
        mean_acc = np.array([r.mean_acc for r in reps])
        table.append({
            "setting": f"{key}={v}", key: v, "categories": reps[0].categories,
            "med_err": med.mean(axis=0).tolist(), "acc": acc.mean(axis=0).tolist(),
            "mean_med_err": float(mean_med.mean()), "std_med_err": float(mean_med.std()),
            "mean_acc": float(mean_acc.mean()), "std_acc": float(mean_acc.std()),
            "seeds": [r.meta["seed"] for r in reps], "per_seed_med_err": mean_med.tolist(),
        })
    return table


def ablation_csv(table: list[dict]) -> str:
    """One MedErr row and one Acc row per setting; mean and std over seeds in the last columns."""
    cats = table[0]["categories"]
    lines = [",".join(["setting", "metric", *cats, "mean", "std"])]
    for row in table:
        lines.append(",".join([row["setting"], "MedErr", *(f"{v:.2f}" for v in row["med_err"]),
                               f"{row['mean_med_err']:.2f}", f"{row['std_med_err']:.2f}"]))
        lines.append(",".join([row["setting"], "Acc", *(f"{v:.4f}" for v in row["acc"]),
                               f"{row['mean_acc']:.4f}", f"{row['std_acc']:.4f}"]))
    return "\n".join(lines) + "\n"


def cmd_ablate(cfg: ExperimentConfig) -> int:
    table = run_sweep(cfg)
    out = output_dir(cfg, "ablate")
    (out / "ablation.json").write_text(json.dumps(table, indent=1))
    (out / "ablation.csv").write_text(ablation_csv(table))
    write_manifest(out, "ablate", cfg)
    print(ablation_csv(table), end="")
    return EXIT_OK


def cmd_selftest(n_probes: int, fault: str | None) -> int:
    results = selftest.run(n_probes=n_probes, fault=fault)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:34s} {r.detail}  [{r.seconds:.2f}s]")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_SELFTEST
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _values(text: str, cast) -> list:
    return [cast(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bindelta", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--variant", choices=models.VARIANTS)
        sp.add_argument("--K", help="bin count (discretize accepts a comma list)")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<command>-<variant>-<hash>)")
        sp.add_argument("--csv", help="feature/pose CSV instead of synthetic data")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name in ("discretize", "train", "eval", "ablate"):
        sp = sub.add_parser(name)
        common(sp)
        if name == "eval":
            sp.add_argument("--bundle", required=True, help="directory written by 'train'")
            sp.add_argument("--split", choices=("all", "val"), default="val")
        if name == "ablate":
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--sweep-K", help="comma list of K values")
            g.add_argument("--sweep-alpha", help="comma list of alpha values")
            sp.add_argument("--n-seeds", type=int)
            sp.add_argument("--jobs", type=int)
    st = sub.add_parser("selftest")
    st.add_argument("--probes", type=int, default=100, help="gradient-check probes per variant")
    st.add_argument("--inject-fault", choices=("log-near-pi",), help="deliberately break a component")
    return p


def resolve_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
    for key in ("variant", "alpha", "gamma", "seed", "epochs", "out", "csv"):
        if getattr(args, key, None) is not None:
            doc[key] = getattr(args, key)
    if args.K is not None:
        try:
            ks = _values(args.K, int)
        except ValueError:
            raise UsageError(f"--K expects integers, got {args.K!r}") from None
        if not ks:
            raise UsageError("--K is empty")
        if args.command == "discretize":
            doc["K_values"], doc["K"] = ks, None
        elif len(ks) == 1:
            doc["K"] = ks[0]
        else:
            raise UsageError("--K takes a single value here; use 'ablate --sweep-K' for lists")
    if args.command == "ablate":
        if args.sweep_K is not None:
            doc["sweep"] = {"K": _values(args.sweep_K, int)}
        if args.sweep_alpha is not None:
            doc["sweep"] = {"alpha": _values(args.sweep_alpha, float)}
        if args.n_seeds is not None:
            doc["n_seeds"] = args.n_seeds
        if args.jobs is not None:
            doc["jobs"] = args.jobs
    try:
        cfg = ExperimentConfig.from_dict(doc)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if cfg.variant not in models.VARIANTS:
        raise UsageError(f"unknown variant {cfg.variant!r}")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return cmd_selftest(args.probes, args.inject_fault)
        cfg = resolve_config(args)
        if args.command == "discretize":
            return cmd_discretize(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.bundle, args.split)
        return cmd_ablate(cfg)
    except UsageError as exc:
        print(f"bindelta: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"bindelta: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
