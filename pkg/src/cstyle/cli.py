"""Command-line front end.

Every subcommand writes into a run directory (``--out``) guarded by a lock
file, and leaves a ``manifest.json`` there with the fully resolved settings,
seeds and library versions. Settings come from built-in defaults, then an
optional flat ``key = value`` config file (``--config``), then flags.

Exit codes: 0 success, 1 user error (bad flags or config, missing
artifacts, invalid values), 2 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import platform
import sys
import traceback
from contextlib import contextmanager
from dataclasses import fields
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import storage
from .datagen import DEFAULT_LEVELS, generate_dataset, make_domain_family
from .errors import CStyleError, ConfigError
from .pipeline import (TrainConfig, alpha_sweep, bound_diagnostics, cluster_sweep, distance_sweep,
                       evaluate, harvest_styles, loo_average, run_leave_one_out, scalability_sweep, train)

log = logging.getLogger("cstyle")

COMMANDS = ("gen-data", "train", "eval", "loo", "distances", "ablate-alpha", "ablate-clusters",
            "scale", "diagnose")

EVAL_HEADER = ("domain_id", "alpha", "n", "correct", "accuracy", "frechet_to_unified")
TRAIN_LOG_HEADER = ("epoch", "mode", "loss", "train_acc", "refresh", "barycenter_residual")


class UsageError(CStyleError, ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(v) for v in _split(text)]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in _split(text)]


def _split(text: str) -> list[str]:
    parts = [p.strip() for p in str(text).split(",")]
    if not parts or any(p == "" for p in parts):
        raise ValueError(f"bad list {text!r}")
    return parts


def _optional_int(text: str) -> Optional[int]:
    return None if str(text).strip().lower() in ("", "none") else int(text)


# every settable key: (parser, default, help)
_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}
SETTINGS = {
    "epochs": (int, 30, "training epochs"),
    "initial_epochs": (int, 5, "plain ERM epochs before alignment starts"),
    "update_interval": (int, 5, "epochs between unified-domain refreshes"),
    "learning_rate": (float, 0.05, "SGD step size"),
    "momentum": (float, 0.0, "SGD momentum"),
    "n_clusters": (int, 4, "mixture components for the style clustering"),
    "alpha": (float, 0.6, "inference projection weight (1 = no alignment)"),
    "batch_size": (int, 32, "minibatch size"),
    "seed": (int, 0, "seed for data generation and training"),
    "unified_method": (str, "average", "average | barycenter"),
    "mode": (str, "conststyle", "erm | conststyle"),
    "domains": (int, 4, "number of domains to generate"),
    "classes": (int, 4, "number of classes"),
    "per_cell": (int, 100, "images per (class, domain) cell"),
    "levels": (_float_list, None, "comma-separated shift levels (default 0,1,2,3 spread over the domains)"),
    "family_seed": (_optional_int, None, "seed for the domain family (default: seed)"),
    "holdout": (_optional_int, None, "domain id excluded from training"),
    "domain": (_int_list, None, "comma-separated domain ids to evaluate (default: all, or the holdout)"),
    "alphas": (_float_list, [round(0.1 * i, 1) for i in range(11)], "comma-separated alpha grid"),
    "counts": (_int_list, [1, 2, 3, 4, 5], "comma-separated cluster counts"),
    "sizes": (_int_list, [800, 1600, 2400, 3200], "comma-separated training-set sizes"),
    "timed_epochs": (int, 5, "timed epochs per size"),
    "data": (str, None, "dataset directory"),
    "model": (str, None, "model directory"),
    "out": (str, None, "output run directory"),
}

COMMAND_HELP = {
    "gen-data": "generate a seeded synthetic multi-domain dataset",
    "train": "train one model (erm or conststyle) and save it",
    "eval": "per-domain accuracy of a saved model",
    "loo": "leave-one-domain-out runs over every domain",
    "distances": "accuracy against style distance for growing shifts",
    "ablate-alpha": "re-run inference of a saved model over an alpha grid",
    "ablate-clusters": "retrain with each number of style clusters",
    "scale": "seconds per training epoch for several dataset sizes",
    "diagnose": "style-gap terms between each domain and the unified style",
}

# keys each subcommand accepts, beyond the training ones where noted
_TRAINING = tuple(_TRAIN_KEYS)
COMMAND_KEYS = {
    "gen-data": ("domains", "classes", "per_cell", "levels", "seed", "family_seed", "out"),
    "train": _TRAINING + ("data", "holdout", "out"),
    "eval": ("model", "data", "domain", "alpha", "out"),
    "loo": _TRAINING + ("data", "out"),
    "distances": _TRAINING + ("levels", "classes", "per_cell", "family_seed", "out"),
    "ablate-alpha": ("model", "data", "domain", "alphas", "out"),
    "ablate-clusters": _TRAINING + ("data", "holdout", "counts", "out"),
    "scale": _TRAINING + ("sizes", "timed_epochs", "classes", "out"),
    "diagnose": ("model", "data", "out"),
}
REQUIRED = {
    "gen-data": ("out",),
    "train": ("data", "out"),
    "eval": ("model", "data"),
    "loo": ("data", "out"),
    "distances": ("out",),
    "ablate-alpha": ("model", "data"),
    "ablate-clusters": ("data", "holdout", "out"),
    "scale": ("out",),
    "diagnose": ("model", "data"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cstyle", description="Unified-style domain generalization experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", help="flat key = value settings file")
        for key in COMMAND_KEYS[name]:
            _, _, text = SETTINGS[key]
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=text)
    return parser


def read_config_file(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[settings]\n" + p.read_text(encoding="utf-8"), source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return {k.strip().replace("-", "_"): v.strip() for k, v in cp["settings"].items()}


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then config file, then flags; unknown keys are rejected."""
    allowed = COMMAND_KEYS[command]
    raw: dict[str, object] = {}
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} for {command}")
            raw[key] = value
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    settings = {}
    for key in allowed:
        parse, default, _ = SETTINGS[key]
        if key in raw:
            try:
                settings[key] = parse(raw[key]) if isinstance(raw[key], str) else raw[key]
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r}") from exc
        else:
            settings[key] = default
    missing = [k for k in REQUIRED[command] if settings.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required setting(s): {', '.join(missing)}")
    return settings


def train_config(settings: dict, **overrides) -> TrainConfig:
    values = {k: settings[k] for k in _TRAIN_KEYS if k in settings}
    values.update(overrides)
    return TrainConfig(**values)


def thread_cap() -> int:
    text = os.environ.get("CSTYLE_THREADS", "1")
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"CSTYLE_THREADS must be a positive integer, got {text!r}") from None
    if n < 1:
        raise ConfigError(f"CSTYLE_THREADS must be a positive integer, got {text!r}")
    return n


@contextmanager
def run_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"run directory {directory} is locked by another process ({lock})") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(f"{os.getpid()}\n")
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"cstyle": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_manifest(directory: Path, command: str, argv: Sequence[str], settings: dict,
                   outputs: Sequence[str]) -> None:
    """Record this command in ``manifest.json``, keeping records of other commands run there."""
    path = directory / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}
    manifest[command] = {"argv": list(argv), "settings": settings, "threads": thread_cap(),
                         "versions": _versions(), "outputs": sorted(outputs)}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _eval_rows(report):
    for r in report.rows:
        yield (r.domain_id, r.alpha, r.n, r.correct, r.accuracy, r.frechet_to_unified)


def _default_levels(n: int) -> list[float]:
    if n == len(DEFAULT_LEVELS):
        return list(DEFAULT_LEVELS)
    return [float(v) for v in np.linspace(0.0, 3.0, n)]


# subcommands; each returns the list of files it wrote

def cmd_gen_data(s: dict, out: Path) -> list[str]:
    levels = s["levels"] if s["levels"] is not None else _default_levels(s["domains"])
    if len(levels) != s["domains"]:
        raise ConfigError(f"got {len(levels)} levels for {s['domains']} domains")
    family_seed = s["seed"] if s["family_seed"] is None else s["family_seed"]
    specs = make_domain_family(s["domains"], levels, family_seed)
    data = generate_dataset(specs, s["classes"], s["per_cell"], s["seed"])
    storage.save_dataset(out, data)
    return list(storage.DATASET_FILES)


def cmd_train(s: dict, out: Path) -> list[str]:
    data = storage.load_dataset(s["data"])
    holdout = s["holdout"]
    if holdout is not None:
        if holdout not in data.domain_ids:
            raise ConfigError(f"holdout domain {holdout} not in dataset")
        data = data.select_domains([d for d in data.domain_ids if d != holdout])
    config = train_config(s)
    net, unified, report = train(data, config)
    info = {"mode": config.mode, "holdout": holdout, "config": s, "train_domains": data.domain_ids,
            "n_classes": data.n_classes}
    initial = report.initial_style_params
    storage.save_model(out, net, info, unified, initial)
    storage.write_csv(out / "train_log.csv", TRAIN_LOG_HEADER,
                      ((e.epoch, e.mode, e.loss, e.train_acc, e.refresh, e.barycenter_residual)
                       for e in report.epochs))
    files = list(storage.MODEL_FILES) + ["train_log.csv"]
    if initial is not None:
        files.append("style_params_initial.cstn")
    if unified is not None:
        files += ["unified_mean.cstn", "unified_cov.cstn", "unified.json"]
    return files


def _load_model_and_data(s: dict):
    net, info, unified, _ = storage.load_model(s["model"])
    data = storage.load_dataset(s["data"])
    if data.n_classes != net.n_classes:
        raise ConfigError(f"model has {net.n_classes} classes, dataset has {data.n_classes}")
    return net, info, unified, data


def _eval_domains(s: dict, info: dict, data) -> list[int]:
    if s.get("domain") is not None:
        return s["domain"]
    if info.get("holdout") is not None:
        return [info["holdout"]]
    return data.domain_ids


def cmd_eval(s: dict, out: Path) -> list[str]:
    net, info, unified, data = _load_model_and_data(s)
    report = evaluate(net, unified, data, s["alpha"], _eval_domains(s, info, data), info.get("mode", "erm"),
                      holdout=info.get("holdout"))
    storage.write_csv(out / "eval.csv", EVAL_HEADER, _eval_rows(report))
    return ["eval.csv"]


def cmd_loo(s: dict, out: Path) -> list[str]:
    data = storage.load_dataset(s["data"])
    config = train_config(s)
    reports = run_leave_one_out(data, config)
    storage.write_csv(out / "loo.csv", ("holdout",) + EVAL_HEADER,
                      ((r.holdout,) + row for r in reports for row in _eval_rows(r)))
    storage.write_csv(out / "loo_summary.csv", ("mode", "folds", "average_accuracy"),
                      [(config.mode, len(reports), loo_average(reports))])
    return ["loo.csv", "loo_summary.csv"]


def cmd_distances(s: dict, out: Path) -> list[str]:
    levels = s["levels"] if s["levels"] is not None else list(DEFAULT_LEVELS)
    rows = distance_sweep(levels, train_config(s), s["classes"], s["per_cell"], s["seed"], s["family_seed"])
    storage.write_csv(out / "distances.csv",
                      ("shift_level", "frechet_to_unified", "erm_accuracy", "conststyle_accuracy"),
                      ((r.shift_level, r.frechet_to_unified, r.erm_accuracy, r.conststyle_accuracy)
                       for r in rows))
    return ["distances.csv"]


def cmd_ablate_alpha(s: dict, out: Path) -> list[str]:
    net, info, unified, data = _load_model_and_data(s)
    if unified is None:
        raise ConfigError("alpha ablation needs a conststyle model (no unified domain found)")
    reports = alpha_sweep(net, unified, data, s["alphas"], _eval_domains(s, info, data))
    storage.write_csv(out / "ablate_alpha.csv", ("alpha_setting",) + EVAL_HEADER,
                      ((a,) + row for a, r in zip(s["alphas"], reports) for row in _eval_rows(r)))
    return ["ablate_alpha.csv"]


def cmd_ablate_clusters(s: dict, out: Path) -> list[str]:
    data = storage.load_dataset(s["data"])
    if s["holdout"] not in data.domain_ids:
        raise ConfigError(f"holdout domain {s['holdout']} not in dataset")
    results = cluster_sweep(data, train_config(s, mode="conststyle"), s["counts"], s["holdout"])
    storage.write_csv(out / "ablate_clusters.csv", ("n_clusters",) + EVAL_HEADER,
                      ((k,) + row for k, r in results for row in _eval_rows(r)))
    return ["ablate_clusters.csv"]


def cmd_scale(s: dict, out: Path) -> list[str]:
    rows = scalability_sweep(s["sizes"], train_config(s), s["timed_epochs"], s["classes"], s["seed"])
    storage.write_csv(out / "scale.csv", ("size", "seconds_per_epoch"), rows)
    return ["scale.csv"]


def cmd_diagnose(s: dict, out: Path) -> list[str]:
    net, info, unified, data = _load_model_and_data(s)
    if unified is None:
        raise ConfigError("diagnostics need a conststyle model (no unified domain found)")
    styles = {d: harvest_styles(net, data.inputs[data.domains == d]) for d in data.domain_ids}
    rows = bound_diagnostics(unified, styles)
    storage.write_csv(out / "diagnose.csv", ("domain_id", "d_mu", "d_sigma", "frechet_to_unified"),
                      ((r.domain_id, r.d_mu, r.d_sigma, r.frechet_to_unified) for r in rows))
    return ["diagnose.csv"]


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "loo": cmd_loo,
    "distances": cmd_distances, "ablate-alpha": cmd_ablate_alpha, "ablate-clusters": cmd_ablate_clusters,
    "scale": cmd_scale, "diagnose": cmd_diagnose,
}


def _run(argv: Sequence[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        raise UsageError(parser.format_usage().strip() + "\nerror: a subcommand is required")
    settings = resolve_settings(args.command, args)
    thread_cap()
    # read-only commands default to writing next to the model
    out = Path(settings["out"] if settings.get("out") is not None else settings["model"])
    with run_lock(out):
        outputs = HANDLERS[args.command](settings, out)
        write_manifest(out, args.command, argv, settings, outputs)
    for name in outputs:
        print(out / name)
    return 0


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except (CStyleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - last-resort guard so callers get exit code 2
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
