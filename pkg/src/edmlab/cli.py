"""Command-line interface: generate benchmarks, train, evaluate, reproduce.

Four subcommands share one configuration model:

  gen    write a provenance-tagged benchmark manifest
  train  run the dual-network procedure (or the plain baseline) on manifests
  eval   score a checkpoint and export analysis tables
  run    gen (unless manifests are given) + train + eval in one output tree

Configuration precedence is flag > config-file line > built-in default.  The
optional config file is flat ``key=value`` text whose keys mirror the flag
names.  The ``EDM_SEED`` environment variable, when set, overrides any seed.
Epoch logs are line-buffered JSON lines carrying a schema version field, and
every output directory gets a run manifest snapshotting the resolved config,
input digests, timestamps, and the complete artifact list.

Exit codes: 0 success, 2 configuration error, 3 data/file error, 4 runtime
(numerical or unexpected) failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .backbone import load_checkpoint, save_checkpoint
from .benchgen import (
    DatasetManifest,
    NoiseSpec,
    inject_noise,
    make_open_pool,
    make_synthetic_clean,
)
from .errors import ConfigError, DataError, NumericsError
from .evaluation import (
    export_features,
    export_loss_histogram,
    export_posteriors,
    split_confusion,
    test_accuracy,
)
from .gmm import GmmConfig, fit_em, group_posteriors, normalize_losses
from .losses import LossWeights, sl_dataset_loss
from .manifest_io import load_manifest, save_manifest
from .train import ALGO_CE, ALGO_EDM, TrainConfig, run, run_baseline_ce

SCHEMA_VERSION = 1
HISTOGRAM_BINS = 20

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


@dataclass
class _Key:
    """One configuration key: its type, default, range rule, and help text."""

    cast: type
    default: object
    check: object  # predicate over the parsed value, or None
    rule: str  # human-readable range description used in error messages
    help: str


_KEYS: dict[str, _Key] = {
    # benchmark geometry
    "classes": _Key(int, 4, lambda v: v >= 2, "an integer >= 2",
                    "number of in-distribution classes"),
    "per_class": _Key(int, 500, lambda v: v >= 1, "an integer >= 1",
                      "training samples per class"),
    "dim": _Key(int, 8, lambda v: v >= 2, "an integer >= 2",
                "feature dimension"),
    "spread": _Key(float, 0.5, lambda v: v > 0, "a positive number",
                   "cluster standard deviation"),
    "rho": _Key(float, 0.6, lambda v: 0.0 <= v <= 1.0, "in [0, 1]",
                "total label-noise rate"),
    "omega": _Key(float, 0.5, lambda v: 0.0 <= v <= 1.0, "in [0, 1]",
                  "closed-set share of the noisy portion"),
    "pool_clusters": _Key(int, 2, lambda v: v >= 0, "an integer >= 0",
                          "number of out-of-distribution pool clusters"),
    "pool_offset": _Key(float, 8.0, lambda v: v > 0, "a positive number",
                        "distance of the pool from the clean clusters"),
    # optimization
    "epochs": _Key(int, 30, lambda v: v >= 0, "an integer >= 0",
                   "main-loop epochs"),
    "batch": _Key(int, 64, lambda v: v >= 1, "an integer >= 1",
                  "minibatch size"),
    "lr": _Key(float, 0.02, lambda v: v > 0, "a positive number",
               "initial learning rate"),
    "lambda_u": _Key(float, 25.0, lambda v: v >= 0, "a number >= 0",
                     "weight of the unlabeled consistency term"),
    "lambda_reg": _Key(float, 1.0, lambda v: v >= 0, "a number >= 0",
                       "weight of the uniform-prior regularizer"),
    "mix_alpha": _Key(float, 4.0, lambda v: v > 0, "a positive number",
                      "Beta parameter of the pairwise mixing coefficient"),
    "m": _Key(int, 2, lambda v: v >= 1, "an integer >= 1",
              "augmented views per sample"),
    "t": _Key(float, 0.5, lambda v: v > 0, "a positive number",
              "sharpening temperature"),
    "psi": _Key(int, 20, lambda v: v >= 3, "an integer >= 3",
                "mixture components of the loss-band classifier"),
    "mu_min": _Key(float, 0.3, lambda v: 0.0 < v < 1.0, "in (0, 1)",
                   "upper mean bound of the clean band"),
    "mu_max": _Key(float, 0.7, lambda v: 0.0 < v < 1.0, "in (0, 1)",
                   "lower mean bound of the closed-set band"),
    "warmup_d": _Key(int, 10, lambda v: v >= 0, "an integer >= 0",
                     "classifier warm-up epochs"),
    "warmup_s": _Key(int, 30, lambda v: v >= 0, "an integer >= 0",
                     "splitter warm-up epochs"),
    "seed": _Key(int, 0, None, "an integer", "master random seed"),
    "algo": _Key(str, ALGO_EDM, lambda v: v in (ALGO_EDM, ALGO_CE),
                 f"one of {{{ALGO_EDM}, {ALGO_CE}}}", "training procedure"),
    # paths (no defaults; requiredness is per-subcommand)
    "manifest": _Key(str, None, None, "a path", "training manifest file"),
    "test_manifest": _Key(str, None, None, "a path", "all-clean test manifest"),
    "checkpoint": _Key(str, None, None, "a path", "model checkpoint file"),
    "out": _Key(str, None, None, "a path", "output manifest file"),
    "out_dir": _Key(str, None, None, "a path", "output directory"),
}

_GEN_KEYS = ("classes", "per_class", "dim", "spread", "rho", "omega",
             "pool_clusters", "pool_offset", "seed")
_TRAIN_KEYS = ("epochs", "batch", "lr", "lambda_u", "lambda_reg", "mix_alpha",
               "m", "t", "psi", "mu_min", "mu_max", "warmup_d", "warmup_s",
               "seed", "algo")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def parse_config(flag_values: dict, config_path: str | None
                 ) -> tuple[NoiseSpec, TrainConfig, dict]:
    """Resolve every configuration key: flag > config file > default.

    Returns the noise description, the training configuration, and the flat
    dict of all resolved values (paths and benchmark geometry included).
    Raises ConfigError for unknown keys and out-of-range values, naming the
    offending flag.
    """
    resolved = {k: spec.default for k, spec in _KEYS.items()}

    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(
                    f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                resolved[key] = _KEYS[key].cast(value.strip())
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: {key} must be {_KEYS[key].rule}, "
                    f"got {value.strip()!r}") from None

    for key, value in flag_values.items():
        if key in _KEYS and value is not None:
            resolved[key] = value

    env_seed = os.environ.get("EDM_SEED")
    if env_seed is not None:
        try:
            resolved["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(
                f"EDM_SEED must be an integer, got {env_seed!r}") from None

    for key, spec in _KEYS.items():
        value = resolved[key]
        if spec.check is not None and value is not None and not spec.check(value):
            raise ConfigError(
                f"{_flag(key)} must be {spec.rule}, got {value}")
    if resolved["mu_min"] >= resolved["mu_max"]:
        raise ConfigError(
            f"--mu-min must be below --mu-max, got "
            f"{resolved['mu_min']} >= {resolved['mu_max']}")

    noise = NoiseSpec(rho=resolved["rho"], omega=resolved["omega"],
                      seed=resolved["seed"])
    cfg = TrainConfig(
        epochs=resolved["epochs"],
        batch_size=resolved["batch"],
        learning_rate=resolved["lr"],
        warmup_epochs_netd=resolved["warmup_d"],
        warmup_epochs_nets=resolved["warmup_s"],
        num_augments=resolved["m"],
        temperature=resolved["t"],
        mix_alpha=resolved["mix_alpha"],
        loss_weights=LossWeights(lambda_u=resolved["lambda_u"],
                                 lambda_reg=resolved["lambda_reg"]),
        gmm=GmmConfig(num_components=resolved["psi"],
                      mu_min=resolved["mu_min"], mu_max=resolved["mu_max"]),
        seed=resolved["seed"],
    )
    try:
        noise.validate()
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return noise, cfg, resolved


@dataclass
class RunManifest:
    """Reproducibility record written next to every run's artifacts."""

    command: str
    config: dict
    input_digests: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""
    outcome: str = "incomplete"
    schema_version: int = SCHEMA_VERSION
    artifact_version: str = __version__

    def write(self, out_dir: Path) -> None:
        self.artifacts = sorted(set(self.artifacts + ["run_manifest.json"]))
        payload = json.dumps(self.__dict__, sort_keys=True, indent=2)
        (out_dir / "run_manifest.json").write_text(payload + "\n")


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _sha256(path: str | os.PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_snapshot(resolved: dict, noise: NoiseSpec, cfg: TrainConfig) -> dict:
    """The full resolved configuration, implicit defaults included."""
    snapshot = dict(resolved)
    snapshot.update({
        "momentum": cfg.momentum,
        "weight_decay": cfg.weight_decay,
        "lr_drop_factor": cfg.lr_drop_factor,
        "lr_drop_epoch": cfg.resolved_lr_drop_epoch,
        "hidden_widths": list(cfg.hidden_widths),
        "augment_mode": cfg.augment.mode,
        "jitter_sigma": cfg.augment.jitter_sigma,
        "open_source": noise.open_source,
        "flip_distribution": noise.flip_distribution,
    })
    return snapshot


def _require_file(path: str | None, flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{flag} file not found: {p}")
    return p


def _generate_benchmark(resolved: dict) -> DatasetManifest:
    """Clean blobs plus injected noise, all derived from one seed."""
    seed = resolved["seed"]
    clean = make_synthetic_clean(resolved["classes"], resolved["per_class"],
                                 resolved["dim"], resolved["spread"], seed=seed)
    spec = NoiseSpec(rho=resolved["rho"], omega=resolved["omega"],
                     seed=seed + 2000)
    _, n_open = spec.counts(len(clean))
    if n_open > 0 and resolved["pool_clusters"] < 1:
        raise ConfigError(
            "--pool-clusters must be >= 1 when open-set noise is requested")
    per_cluster = (max(1, math.ceil(n_open / resolved["pool_clusters"]))
                   if resolved["pool_clusters"] > 0 else 0)
    pool = make_open_pool(resolved["pool_clusters"], per_cluster,
                          resolved["dim"], resolved["spread"],
                          resolved["pool_offset"], seed=seed + 1000)
    return inject_noise(clean, pool, spec)


def _generate_test_set(resolved: dict) -> DatasetManifest:
    """All-clean held-out set: half the training size, disjoint seed."""
    per_class = max(1, resolved["per_class"] // 2)
    return make_synthetic_clean(resolved["classes"], per_class,
                                resolved["dim"], resolved["spread"],
                                seed=resolved["seed"] + 3000)


def _train_into(train_ds: DatasetManifest, test_ds: DatasetManifest,
                cfg: TrainConfig, algo: str, out_dir: Path) -> tuple:
    """Run training, streaming the epoch log; write best/last checkpoints."""
    artifacts = ["epochs.jsonl"]
    best = {"accuracy": -1.0, "params": None}
    with open(out_dir / "epochs.jsonl", "w", buffering=1) as fh:

        def on_epoch(report, netd, nets):
            record = report.to_record()
            record["schema_version"] = SCHEMA_VERSION
            record["algo"] = algo
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            if report.test_accuracy > best["accuracy"]:
                best["accuracy"] = report.test_accuracy
                best["params"] = netd.copy()

        if algo == ALGO_EDM:
            outcome = run(train_ds, test_ds, cfg, on_epoch=on_epoch)
        else:
            outcome = run_baseline_ce(train_ds, test_ds, cfg, on_epoch=on_epoch)

    save_checkpoint(outcome.netd, out_dir / "netd_last.ckpt")
    artifacts.append("netd_last.ckpt")
    best_params = best["params"] if best["params"] is not None else outcome.netd
    save_checkpoint(best_params, out_dir / "netd_best.ckpt")
    artifacts.append("netd_best.ckpt")
    if outcome.nets is not None:
        save_checkpoint(outcome.nets, out_dir / "nets_last.ckpt")
        artifacts.append("nets_last.ckpt")
    return outcome, artifacts


def _eval_into(model, train_ds: DatasetManifest, test_ds: DatasetManifest,
               gmm_cfg: GmmConfig, out_dir: Path) -> tuple[list, dict]:
    """Score a model and export the analysis tables into ``out_dir``."""
    _, per_sample = sl_dataset_loss(model, train_ds)
    norm = normalize_losses(per_sample)
    gmodel = fit_em(norm, gmm_cfg)
    split = group_posteriors(gmodel, norm, gmm_cfg)
    confusion = split_confusion(split, train_ds)

    export_loss_histogram(norm, train_ds.provenance, HISTOGRAM_BINS,
                          out_dir / "loss_histogram.csv")
    export_posteriors(norm, split, train_ds.provenance,
                      out_dir / "posteriors.csv")
    export_features(model, train_ds, out_dir / "features.csv")
    summary = {
        "schema_version": SCHEMA_VERSION,
        "test_accuracy": test_accuracy(model, test_ds),
        "split_balanced_accuracy": confusion.balanced_accuracy,
        "confusion": confusion.matrix.tolist(),
        "provenance_counts": list(train_ds.counts),
    }
    (out_dir / "eval.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return ["loss_histogram.csv", "posteriors.csv", "features.csv",
            "eval.json"], summary


def _emit(payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    print(json.dumps(payload, sort_keys=True), flush=True)


# -- subcommand handlers -----------------------------------------------


def cmd_gen(ns: argparse.Namespace) -> int:
    _, _, resolved = parse_config(vars(ns), ns.config)
    if resolved["out"] is None:
        raise ConfigError("--out is required")
    dataset = _generate_benchmark(resolved)
    out = Path(resolved["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_manifest(dataset, out)
    clean, closed, open_ = dataset.counts
    _emit({"event": "gen", "out": str(out), "n": len(dataset),
           "n_clean": clean, "n_closed": closed, "n_open": open_})
    return EXIT_OK


def cmd_train(ns: argparse.Namespace) -> int:
    noise, cfg, resolved = parse_config(vars(ns), ns.config)
    train_path = _require_file(resolved["manifest"], "--manifest")
    test_path = _require_file(resolved["test_manifest"], "--test-manifest")
    if resolved["out_dir"] is None:
        raise ConfigError("--out-dir is required")
    train_ds = load_manifest(train_path)
    test_ds = load_manifest(test_path)

    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="train",
        config=_config_snapshot(resolved, noise, cfg),
        input_digests={str(train_path): _sha256(train_path),
                       str(test_path): _sha256(test_path)},
        started_at=_utc_now(),
    )
    outcome, artifacts = _train_into(train_ds, test_ds, cfg,
                                     resolved["algo"], out_dir)
    manifest.artifacts += artifacts
    manifest.finished_at = _utc_now()
    manifest.outcome = "ok"
    manifest.write(out_dir)
    acc = outcome.accuracy
    _emit({"event": "train", "out_dir": str(out_dir), "algo": resolved["algo"],
           "epochs": cfg.epochs,
           "best_accuracy": acc.best if outcome.reports else None,
           "last_accuracy": acc.last if outcome.reports else None})
    return EXIT_OK


def cmd_eval(ns: argparse.Namespace) -> int:
    noise, cfg, resolved = parse_config(vars(ns), ns.config)
    ckpt_path = _require_file(resolved["checkpoint"], "--checkpoint")
    train_path = _require_file(resolved["manifest"], "--manifest")
    test_path = _require_file(resolved["test_manifest"], "--test-manifest")
    if resolved["out_dir"] is None:
        raise ConfigError("--out-dir is required")
    model = load_checkpoint(ckpt_path)
    train_ds = load_manifest(train_path)
    test_ds = load_manifest(test_path)

    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="eval",
        config=_config_snapshot(resolved, noise, cfg),
        input_digests={str(p): _sha256(p)
                       for p in (ckpt_path, train_path, test_path)},
        started_at=_utc_now(),
    )
    artifacts, summary = _eval_into(model, train_ds, test_ds, cfg.gmm, out_dir)
    manifest.artifacts += artifacts
    manifest.finished_at = _utc_now()
    manifest.outcome = "ok"
    manifest.write(out_dir)
    _emit({"event": "eval", "out_dir": str(out_dir),
           "test_accuracy": summary["test_accuracy"],
           "split_balanced_accuracy": summary["split_balanced_accuracy"]})
    return EXIT_OK


def cmd_run(ns: argparse.Namespace) -> int:
    noise, cfg, resolved = parse_config(vars(ns), ns.config)
    if resolved["out_dir"] is None:
        raise ConfigError("--out-dir is required")
    if (resolved["manifest"] is None) != (resolved["test_manifest"] is None):
        raise ConfigError(
            "--manifest and --test-manifest must be given together")

    generated = resolved["manifest"] is None
    if not generated:
        train_path = _require_file(resolved["manifest"], "--manifest")
        test_path = _require_file(resolved["test_manifest"], "--test-manifest")
        train_ds = load_manifest(train_path)
        test_ds = load_manifest(test_path)

    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[str] = []
    if generated:
        train_ds = _generate_benchmark(resolved)
        test_ds = _generate_test_set(resolved)
        train_path = out_dir / "train.manifest"
        test_path = out_dir / "test.manifest"
        save_manifest(train_ds, train_path)
        save_manifest(test_ds, test_path)
        artifacts += ["train.manifest", "test.manifest"]

    manifest = RunManifest(
        command="run",
        config=_config_snapshot(resolved, noise, cfg),
        input_digests={str(train_path): _sha256(train_path),
                       str(test_path): _sha256(test_path)},
        started_at=_utc_now(),
    )
    outcome, train_artifacts = _train_into(train_ds, test_ds, cfg,
                                           resolved["algo"], out_dir)
    eval_artifacts, summary = _eval_into(outcome.netd, train_ds, test_ds,
                                         cfg.gmm, out_dir)
    manifest.artifacts += artifacts + train_artifacts + eval_artifacts
    manifest.finished_at = _utc_now()
    manifest.outcome = "ok"
    manifest.write(out_dir)
    acc = outcome.accuracy
    _emit({"event": "run", "out_dir": str(out_dir), "algo": resolved["algo"],
           "generated_benchmark": generated, "epochs": cfg.epochs,
           "best_accuracy": acc.best if outcome.reports else None,
           "last_accuracy": acc.last if outcome.reports else None,
           "test_accuracy": summary["test_accuracy"],
           "split_balanced_accuracy": summary["split_balanced_accuracy"]})
    return EXIT_OK


# -- parser wiring -----------------------------------------------------


def _add_keys(parser: argparse.ArgumentParser, keys: tuple[str, ...]) -> None:
    for key in keys:
        spec = _KEYS[key]
        parser.add_argument(_flag(key), dest=key, type=spec.cast,
                            default=None, help=spec.help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edmlab",
        description="Benchmark generation, noise-robust training, and "
                    "evaluation for combined closed-set/open-set label noise.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a benchmark manifest")
    _add_keys(p_gen, _GEN_KEYS + ("out",))
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train on existing manifests")
    _add_keys(p_train, ("manifest", "test_manifest") + _TRAIN_KEYS
              + ("out_dir",))
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint and export tables")
    _add_keys(p_eval, ("checkpoint", "manifest", "test_manifest", "out_dir"))
    p_eval.set_defaults(func=cmd_eval)

    p_run = sub.add_parser(
        "run", help="generate (unless manifests are given), train, evaluate")
    run_keys = tuple(k for k in _GEN_KEYS if k != "seed") \
        + ("manifest", "test_manifest") + _TRAIN_KEYS + ("out_dir",)
    _add_keys(p_run, run_keys)
    p_run.set_defaults(func=cmd_run)

    for sp in (p_gen, p_train, p_eval, p_run):
        sp.add_argument("--config", default=None,
                        help="flat key=value config file (flags win)")
    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
