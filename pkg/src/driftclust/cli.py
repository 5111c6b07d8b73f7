"""Command-line front end for reproducible clustering runs.

Subcommands: cluster (one run), eval (NMI between two label files), sweep
(k_m / epoch / seed grid to CSV). Settings resolve as flag > config file >
default; config files are flat key=value lines and unknown keys are errors.

Exit codes: 0 success, 2 config error, 3 divergence, 4 I/O error.
"""

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .backbone import BACKBONE_KINDS, BackboneSpec
from .dataio import (CheckpointError, CsvFormatError, IdxFormatError, atomic_write_text,
                     gen_blobs, load_checkpoint, load_csv, load_idx, load_labels,
                     save_checkpoint, save_labels)
from .metrics import build_contingency, entropy, nmi
from .tensor import SeededRng
from .trainer import MODES, ROLLBACK_MODES, DivergenceError, JointTrainer, TrainerConfig


class ConfigError(ValueError):
    """Bad or missing run configuration."""


# key -> (type, default); dataset source has no default on purpose
SETTINGS = {
    "data": (str, None),
    "images": (str, None),
    "labels": (str, None),
    "csv": (str, None),
    "k": (int, 10),
    "nm": (int, 50),
    "km": (int, 10),
    "eta": (float, 0.045),
    "epochs": (int, 10),
    "max_iters": (int, 0),
    "mode": (str, "full"),
    "backbone": (str, "flatten"),
    "backbone_dim": (int, 128),
    "hidden_dim": (int, 128),
    "seed": (int, 0),
    "drift_rollback": (str, "last_step"),
    "out_labels": (str, "labels.csv"),
    "out_metrics": (str, "metrics.txt"),
    "checkpoint": (str, None),
    "resume": (str, None),
    "blob_dim": (int, 50),
    "blob_points": (int, 500),
    "blob_separation": (float, 10.0),
    "blob_sigma": (float, 1.0),
    "lloyd_iters": (int, 100),
    "lloyd_tol": (float, 1e-6),
}

# keys that define the run for checkpoint compatibility (epochs and output
# paths deliberately excluded: a resume may extend the epoch budget)
_IDENTITY_KEYS = (
    "data", "k", "nm", "km", "eta", "max_iters", "mode", "backbone", "backbone_dim",
    "hidden_dim", "seed", "drift_rollback", "blob_dim", "blob_points",
    "blob_separation", "blob_sigma", "lloyd_iters", "lloyd_tol",
)


def _parse_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not key=value: {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SETTINGS:
            raise ConfigError(f"unknown config key: {key}")
        values[key] = _convert(key, value)
    return values


def _convert(key, text):
    typ = SETTINGS[key][0]
    try:
        return typ(text)
    except ValueError:
        raise ConfigError(f"config key {key} expects {typ.__name__}, got {text!r}") from None


def resolve_settings(ns):
    """flag > config file > default."""
    settings = {k: default for k, (_, default) in SETTINGS.items()}
    if getattr(ns, "config", None):
        settings.update(_parse_config_file(ns.config))
    for key in SETTINGS:
        flag_value = getattr(ns, key, None)
        if flag_value is not None:
            settings[key] = flag_value
    return settings


def build_dataset(settings):
    source = settings["data"]
    if source is None:
        raise ConfigError("no dataset source configured (key: data)")
    if source == "mnist":
        if not settings["images"]:
            raise ConfigError("mnist data needs an IDX image file (key: images)")
        return load_idx(settings["images"], settings["labels"] or None)
    if source == "blobs":
        return gen_blobs(k=settings["k"], points_per_cluster=settings["blob_points"],
                         dim=settings["blob_dim"], separation=settings["blob_separation"],
                         noise_sigma=settings["blob_sigma"], rng=SeededRng(settings["seed"]))
    if source == "csv":
        if not settings["csv"]:
            raise ConfigError("csv data needs a file path (key: csv)")
        return load_csv(settings["csv"])
    raise ConfigError(f"unknown data source {source!r} (key: data)")


def build_backbone_spec(settings, dataset):
    kind = settings["backbone"]
    if kind not in BACKBONE_KINDS:
        raise ConfigError(f"unknown backbone {kind!r} (key: backbone)")
    h, w, c = dataset.shape
    out_dim = h * w * c if kind == "flatten" else settings["backbone_dim"]
    # seed offset keeps the frozen backbone off the trainer's RNG stream
    try:
        return BackboneSpec(kind=kind, input_shape=dataset.shape, output_dim=out_dim,
                            seed=settings["seed"] + 1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_trainer_config(settings):
    cfg = TrainerConfig(
        k=settings["k"], n_m=settings["nm"], k_m=settings["km"], eta=settings["eta"],
        epochs=settings["epochs"], max_iters=settings["max_iters"], mode=settings["mode"],
        seed=settings["seed"], hidden_dim=settings["hidden_dim"],
        drift_rollback=settings["drift_rollback"],
        lloyd_iters=settings["lloyd_iters"], lloyd_tol=settings["lloyd_tol"],
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def canonical_config_text(settings, dataset):
    entries = {key: settings[key] for key in _IDENTITY_KEYS}
    entries["dataset_name"] = dataset.name
    entries["dataset_n"] = dataset.n
    entries["dataset_shape"] = "x".join(str(d) for d in dataset.shape)
    entries["labeled"] = int(dataset.labels is not None)
    return "".join(f"{k}={entries[k]!r}\n" for k in sorted(entries))


def _metrics_text(settings, result, dataset):
    lines = [
        f"mode={settings['mode']}",
        f"k={settings['k']}",
        f"nm={settings['nm']}",
        f"km={settings['km']}",
        f"eta={settings['eta']!r}",
        f"epochs={settings['epochs']}",
        f"seed={settings['seed']}",
        f"backbone={settings['backbone']}",
        f"hidden_dim={settings['hidden_dim']}",
        f"dataset={dataset.name}",
        f"samples={dataset.n}",
        f"finetunes={result.finetunes}",
        f"iterations={result.iterations}",
    ]
    if dataset.labels is not None:
        final = result.nmi_history[-1] if result.nmi_history else nmi(dataset.labels, result.labels)
        lines.append(f"nmi={final:.6f}")
        lines.append("nmi_history=" + ",".join(f"{v:.6f}" for v in result.nmi_history))
    return "\n".join(lines) + "\n"


def cmd_cluster(ns) -> int:
    settings = resolve_settings(ns)
    dataset = build_dataset(settings)
    spec = build_backbone_spec(settings, dataset)
    config = build_trainer_config(settings)
    canon = canonical_config_text(settings, dataset)

    if settings["resume"]:
        if config.mode == "baseline3":
            raise ConfigError("resume is not supported for baseline3 (single-shot mode)")
        ckpt = load_checkpoint(settings["resume"])
        if ckpt.config_text != canon:
            raise ConfigError("checkpoint was produced by a different configuration; "
                              "only the epoch budget may change on resume")
        trainer = JointTrainer.from_checkpoint(ckpt, dataset, spec, config,
                                               ground_truth=dataset.labels)
    else:
        try:
            trainer = JointTrainer(dataset, spec, config, ground_truth=dataset.labels)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    callback = None
    if settings["checkpoint"] and config.mode != "baseline3":
        def callback(tr):
            save_checkpoint(settings["checkpoint"], tr.to_checkpoint(canon))

    result = trainer.run(epoch_callback=callback)
    if settings["checkpoint"] and config.mode == "baseline3":
        save_checkpoint(settings["checkpoint"], trainer.to_checkpoint(canon))

    save_labels(settings["out_labels"], result.labels)
    atomic_write_text(settings["out_metrics"], _metrics_text(settings, result, dataset))
    final = f"{result.nmi_history[-1]:.6f}" if result.nmi_history else "na"
    # wall time goes to stdout only; the metrics file stays byte-reproducible
    print(f"mode={config.mode} k={config.k} epochs={trainer.epochs_done} nmi={final} "
          f"wall_ms={result.wall_ms}")
    return 0


def cmd_eval(ns) -> int:
    a = load_labels(ns.file_a)
    b = load_labels(ns.file_b)
    if a.shape != b.shape:
        raise ConfigError(f"label files differ in length: {a.shape[0]} vs {b.shape[0]}")
    table = build_contingency(a, b)
    if entropy(table.row_sums, table.n) == 0.0 or entropy(table.col_sums, table.n) == 0.0:
        print("warning: a partition has zero entropy; NMI is the documented convention value",
              file=sys.stderr)
    print(f"{nmi(a, b):.6f}")
    return 0


def _parse_int_list(text, flag):
    try:
        values = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects a comma-separated integer list, got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag} must not be empty")
    return values


def run_sweep_cell(settings) -> dict:
    started = time.perf_counter()
    row = {"km": settings["km"], "epochs": settings["epochs"], "seed": settings["seed"],
           "nmi": "nan", "finetunes": 0}
    try:
        dataset = build_dataset(settings)
        spec = build_backbone_spec(settings, dataset)
        config = build_trainer_config(settings)
        result = JointTrainer(dataset, spec, config, ground_truth=dataset.labels).run()
        if result.nmi_history:
            row["nmi"] = f"{result.nmi_history[-1]:.6f}"
        row["finetunes"] = result.finetunes
    except Exception as exc:  # record the failure, keep sweeping
        print(f"sweep cell km={row['km']} epochs={row['epochs']} seed={row['seed']} "
              f"failed: {exc}", file=sys.stderr)
    row["wall_ms"] = int(round((time.perf_counter() - started) * 1000))
    return row


def cmd_sweep(ns) -> int:
    settings = resolve_settings(ns)
    km_values = _parse_int_list(ns.km_list, "--km-list") if ns.km_list else [settings["km"]]
    epoch_values = _parse_int_list(ns.epochs_list, "--epochs-list") if ns.epochs_list else [settings["epochs"]]
    seeds = _parse_int_list(ns.seeds, "--seeds") if ns.seeds else [settings["seed"]]

    cells = []
    for km in km_values:
        for epochs in epoch_values:
            for seed in seeds:
                cell = dict(settings)
                cell.update(km=km, epochs=epochs, seed=seed)
                cells.append(cell)

    if ns.parallel and ns.parallel > 1:
        with ProcessPoolExecutor(max_workers=ns.parallel) as pool:
            rows = list(pool.map(run_sweep_cell, cells))
    else:
        rows = [run_sweep_cell(cell) for cell in cells]

    out = ["km,epochs,seed,nmi,finetunes,wall_ms"]
    out += [f"{r['km']},{r['epochs']},{r['seed']},{r['nmi']},{r['finetunes']},{r['wall_ms']}"
            for r in rows]
    atomic_write_text(ns.out, "\n".join(out) + "\n")
    print(f"sweep wrote {len(rows)} rows to {ns.out}")
    return 0


def _add_run_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", choices=("mnist", "blobs", "csv"))
    p.add_argument("--images", help="IDX image file (mnist)")
    p.add_argument("--labels", help="IDX label file (mnist)")
    p.add_argument("--csv", help="CSV feature table")
    p.add_argument("--k", type=int)
    p.add_argument("--nm", type=int, help="mini-batch size")
    p.add_argument("--km", type=int, help="reliable samples kept per mini-batch")
    p.add_argument("--eta", type=float, help="SGD learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--backbone", choices=BACKBONE_KINDS)
    p.add_argument("--backbone-dim", dest="backbone_dim", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--drift-rollback", dest="drift_rollback", choices=ROLLBACK_MODES)
    p.add_argument("--blob-dim", dest="blob_dim", type=int)
    p.add_argument("--blob-points", dest="blob_points", type=int)
    p.add_argument("--blob-separation", dest="blob_separation", type=float)
    p.add_argument("--blob-sigma", dest="blob_sigma", type=float)
    p.add_argument("--lloyd-iters", dest="lloyd_iters", type=int)
    p.add_argument("--lloyd-tol", dest="lloyd_tol", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="driftclust",
                                     description="joint clustering and representation learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cluster = sub.add_parser("cluster", help="run one clustering experiment")
    _add_run_flags(p_cluster)
    p_cluster.add_argument("--out-labels", dest="out_labels")
    p_cluster.add_argument("--out-metrics", dest="out_metrics")
    p_cluster.add_argument("--checkpoint", help="write a checkpoint after every epoch")
    p_cluster.add_argument("--resume", help="resume from a checkpoint file")
    p_cluster.set_defaults(func=cmd_cluster)

    p_eval = sub.add_parser("eval", help="NMI between two label files")
    p_eval.add_argument("file_a")
    p_eval.add_argument("file_b")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="grid of runs, results to CSV")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--km-list", dest="km_list", help="comma-separated k_m values")
    p_sweep.add_argument("--epochs-list", dest="epochs_list", help="comma-separated epoch counts")
    p_sweep.add_argument("--seeds", help="comma-separated seeds")
    p_sweep.add_argument("--out", default="sweep.csv")
    p_sweep.add_argument("--parallel", type=int, default=0, help="run cells in N worker processes")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except (IdxFormatError, CsvFormatError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
