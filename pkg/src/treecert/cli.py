"""``treecert`` command line: unify, train, rules and verify.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from . import data_io, training
from .data_io import AuditLog, DataError, LabelRule
from .model import CLASSIFIER, ModelError, as_ensemble, dump_ensemble, load_ensemble
from .rules import FeatureInfo, Schema, extract_rules, render, rules_to_dicts, simplify
from .verifier import VerificationError, VerifyParams, run_verification, validate_report

logger = logging.getLogger("treecert")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


_PATH_KEYS = ("model", "data", "maps", "schema", "test_data")


@dataclass
class Config:
    model: str | None = None
    data: str | None = None
    num_points: int = 1000
    eps_init: float = 0.3
    max_clique: int = 2
    max_search: int = 10
    max_level: int = 1
    dp: int = 0
    seed: int = 0
    train_fraction: float = data_io.DEFAULT_TRAIN_FRACTION
    # unify
    maps: str | None = None
    features: list[str] | None = None
    label_column: str | None = None
    positive_labels: list[str] | None = None
    # train
    depths: list[int] = field(default_factory=lambda: list(training.DEFAULT_DEPTHS))
    min_samples: list[int] = field(default_factory=lambda: list(training.DEFAULT_MIN_SAMPLES))
    boosted: bool = False
    n_rounds: int = 20
    learning_rate: float = 0.3
    l2_reg: float = 1.0
    test_data: str | None = None
    # rules
    schema: str | None = None
    target: int = 1

    def verify_params(self) -> VerifyParams:
        return VerifyParams(self.eps_init, self.max_search, self.max_level, self.max_clique, self.dp)

    def train_params(self) -> training.TrainParams:
        return training.TrainParams(
            n_rounds=self.n_rounds, learning_rate=self.learning_rate, l2_reg=self.l2_reg
        )


_TYPES: dict[str, Any] = {
    "model": str, "data": str, "maps": str, "schema": str, "test_data": str, "label_column": str,
    "num_points": int, "max_clique": int, "max_search": int, "max_level": int, "dp": int, "seed": int,
    "n_rounds": int, "target": int,
    "eps_init": float, "train_fraction": float, "learning_rate": float, "l2_reg": float,
    "boosted": bool,
    "features": (list, str), "positive_labels": (list, str), "depths": (list, int), "min_samples": (list, int),
}


def _check_type(key: str, value: Any) -> Any:
    want = _TYPES[key]
    if isinstance(want, tuple):
        _, item = want
        if not isinstance(value, list) or not all(_is(v, item) for v in value):
            raise ConfigError(f"{key}: expected a list of {item.__name__}")
        return list(value)
    if not _is(value, want):
        raise ConfigError(f"{key}: expected {want.__name__}, got {type(value).__name__}")
    return float(value) if want is float else value


def _is(value: Any, kind: type) -> bool:
    if kind is bool:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if kind is float:
        return isinstance(value, (int, float))
    return isinstance(value, kind)


def validate_config(cfg: Config) -> Config:
    checks = [
        ("num_points", cfg.num_points >= 1, "must be >= 1"),
        ("eps_init", cfg.eps_init > 0, "must be > 0"),
        ("max_clique", cfg.max_clique >= 2, "must be >= 2"),
        ("max_search", cfg.max_search >= 1, "must be >= 1"),
        ("max_level", cfg.max_level >= 1, "must be >= 1"),
        ("dp", cfg.dp in (0, 1), "must be 0 or 1"),
        ("train_fraction", 0 < cfg.train_fraction < 1, "must lie in (0, 1)"),
        ("depths", bool(cfg.depths) and min(cfg.depths) >= 1, "must be a nonempty list of depths >= 1"),
        ("min_samples", bool(cfg.min_samples) and min(cfg.min_samples) >= 2, "must be a nonempty list of values >= 2"),
        ("n_rounds", cfg.n_rounds >= 1, "must be >= 1"),
        ("learning_rate", 0 < cfg.learning_rate <= 1, "must lie in (0, 1]"),
        ("l2_reg", cfg.l2_reg >= 0, "must be >= 0"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(f"{key}: {msg}")
    return cfg


def parse_config(text: str | None = None, base_dir: str | Path | None = None, **overrides: Any) -> Config:
    """Build a Config from JSON text; omitted keys take the defaults.

    Relative paths resolve against ``base_dir``. ``overrides`` (non-None
    values only) replace file keys.
    """
    raw: dict[str, Any] = {}
    if text:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(Config)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {k: _check_type(k, v) for k, v in raw.items()}
    if base_dir is not None:
        for key in _PATH_KEYS:
            if key in values and not os.path.isabs(values[key]):
                values[key] = str(Path(base_dir) / values[key])
    for key, v in overrides.items():
        if v is not None:
            values[key] = _check_type(key, v)
    return validate_config(Config(**values))


def load_config(path: str | None, **overrides: Any) -> Config:
    if path is None:
        return parse_config(None, **overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, Path(path).resolve().parent, **overrides)


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _read_dataset(path: str | None) -> data_io.Dataset:
    if path is None:
        raise ConfigError("no data path given (set 'data' or pass --data)")
    with open(path) as fh:
        return data_io.parse_libsvm(fh)


def _read_model(path: str | None):
    if path is None:
        raise ConfigError("no model path given (set 'model' or pass --model)")
    return load_ensemble(Path(path).read_text())


def _sibling(path: str | Path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


# ---------------------------------------------------------------------------
# subcommands


def _schema_for(features: Sequence[str], maps, records) -> Schema:
    """Rule-rendering schema: code dictionaries for mapped features, numeric kinds otherwise."""
    by_name = {m.feature_name: m for m in maps}
    infos = []
    for name in features:
        m = by_name.get(name)
        if m is None:
            integer = all(float(r[name]).is_integer() for r in records)
            infos.append(FeatureInfo(name, integer=integer))
            continue
        codes = m.codebook or (set(m.entries.values()) | {m.default_code})
        infos.append(FeatureInfo(name, {c: m.labels.get(c, str(c)) for c in sorted(codes)}, integer=True))
    return Schema(infos)


def cmd_unify(args: argparse.Namespace, cfg: Config) -> int:
    maps_path = args.maps or cfg.maps
    if maps_path is None:
        raise ConfigError("no mapping spec given (set 'maps' or pass --maps)")
    maps = data_io.load_unification_maps(Path(maps_path).read_text())
    label_column = args.label_column or cfg.label_column
    if label_column is None:
        raise ConfigError("no label column given (set 'label_column' or pass --label-column)")
    positive = args.positive or cfg.positive_labels
    if not positive:
        raise ConfigError("no positive labels given (set 'positive_labels' or pass --positive)")
    if not args.csv:
        raise UsageError("unify needs at least one CSV file")
    out = args.out or (cfg.data if cfg.data else None)
    if out is None:
        raise UsageError("unify needs --out")

    audit = AuditLog()
    unified: list[dict[str, Any]] = []
    columns: list[str] = []
    for path in args.csv:
        with open(path, newline="") as fh:
            rows = data_io.read_crash_csv(fh)
        for i, row in enumerate(rows, start=1):
            for col in row:
                if col not in columns:
                    columns.append(col)
            unified.append(data_io.unify_record(row, maps, audit, source=str(path), row=i))

    features = args.features or cfg.features
    if not features:
        mapped = [m.feature_name for m in maps]
        sources = {m.source_column for m in maps}
        rest = [c for c in columns if c not in sources and c not in mapped and c != label_column]
        features = mapped + rest
    rule = LabelRule(label_column, frozenset(data_io.normalize_category(p) for p in positive))
    dataset = data_io.encode_dataset(unified, features, rule)

    schema = _schema_for(features, maps, unified)
    write_atomic(out, data_io.export_libsvm(dataset))
    write_atomic(_sibling(out, ".audit.csv"), audit.to_csv())
    write_atomic(_sibling(out, ".schema.json"), json.dumps(schema.to_mapping(), indent=2) + "\n")
    print(f"unified {len(dataset)} rows, {dataset.n_features} features, {len(audit)} unmapped values -> {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, cfg: Config) -> int:
    dataset = _read_dataset(cfg.data)
    out = args.out or cfg.model
    if out is None:
        raise UsageError("train needs --out or a 'model' config key")
    train, test = data_io.split_train_test(dataset, cfg.train_fraction, cfg.seed)
    if len(train) == 0 or len(test) == 0:
        raise DataError(f"split of {len(dataset)} rows at {cfg.train_fraction} leaves an empty side")
    boosted = args.boosted or cfg.boosted
    result = training.grid_search(
        train, test, cfg.depths, cfg.min_samples, boosted=boosted, base_params=cfg.train_params()
    )
    model = as_ensemble(result.best_model, dataset.n_features)
    test_path = cfg.test_data or str(_sibling(out, ".test.libsvm"))
    report = result.to_dict() | {
        "mode": model.mode,
        "seed": cfg.seed,
        "train_fraction": cfg.train_fraction,
        "n_train": len(train),
        "n_test": len(test),
    }
    write_atomic(out, dump_ensemble(model))
    write_atomic(_sibling(out, ".grid.json"), _dumps(report))
    write_atomic(test_path, data_io.export_libsvm(test))
    write_atomic(_sibling(out, ".train.libsvm"), data_io.export_libsvm(train))
    m = result.best_metrics
    print(
        f"best {model.mode} model: max_depth={result.best_params.max_depth} "
        f"min_samples_split={result.best_params.min_samples_split} "
        f"accuracy={m.accuracy:.4f} precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f} "
        f"({len(result.all_cells)} cells) -> {out}"
    )
    return EXIT_OK


def cmd_rules(args: argparse.Namespace, cfg: Config) -> int:
    model = _read_model(args.model or cfg.model)
    if model.mode != CLASSIFIER or len(model.trees) != 1:
        raise ModelError("rules require classifier mode")
    schema_path = args.schema or cfg.schema
    schema = None
    if schema_path is not None:
        schema = Schema.loads(Path(schema_path).read_text())
    else:
        logger.warning("no schema given; features are rendered by index")
    data_path = args.data
    data = _read_dataset(data_path) if data_path else None
    target = args.target if args.target is not None else cfg.target
    codebooks = schema.codebooks() if schema else {}
    rules = [r for r in (simplify(r, codebooks) for r in extract_rules(model, target, data)) if r is not None]
    for r in rules:
        print(render(r, schema))
    if args.out:
        write_atomic(args.out, _dumps(rules_to_dicts(rules, schema)))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, cfg: Config) -> int:
    model_path = args.model or cfg.model
    data_path = args.data or cfg.test_data or cfg.data
    model = _read_model(model_path)
    dataset = _read_dataset(data_path)
    report = run_verification(
        model,
        dataset,
        cfg.verify_params(),
        cfg.num_points,
        model_id=Path(model_path).name,
        data_id=Path(data_path).name,
    )
    validate_report(report.to_dict())
    if args.out:
        write_atomic(args.out, report.to_json())
    print(report.summary())
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help="output path")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="treecert", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("unify", parents=[common], help="map raw crash CSVs to a LIBSVM dataset")
    p.add_argument("csv", nargs="*")
    p.add_argument("--maps")
    p.add_argument("--features", type=lambda s: s.split(","))
    p.add_argument("--label-column")
    p.add_argument("--positive", type=lambda s: s.split(","), help="comma-separated severe label values")

    p = sub.add_parser("train", parents=[common], help="grid-search a tree on a LIBSVM dataset")
    p.add_argument("--data")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--boosted", action="store_true", help="train a boosted additive ensemble")

    p = sub.add_parser("rules", parents=[common], help="print the rules of a classifier tree")
    p.add_argument("--model")
    p.add_argument("--schema")
    p.add_argument("--data", help="training data for support / confidence")
    p.add_argument("--target", type=int)

    p = sub.add_parser("verify", parents=[common], help="certify robustness on a LIBSVM dataset")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--num-points", type=int)
    p.add_argument("--eps-init", type=float)
    p.add_argument("--max-search", type=int)
    p.add_argument("--max-level", type=int)
    p.add_argument("--max-clique", type=int)
    p.add_argument("--dp", type=int, choices=(0, 1))
    return parser


_COMMANDS = {"unify": cmd_unify, "train": cmd_train, "rules": cmd_rules, "verify": cmd_verify}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(_COMMANDS))
        for name in ("config", "seed", "out", "verbose"):
            if not hasattr(args, name):
                setattr(args, name, None)
        logging.basicConfig(
            level=logging.DEBUG if (args.verbose or 0) > 1 else logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        overrides = {
            "seed": args.seed,
            "train_fraction": getattr(args, "train_fraction", None),
            "num_points": getattr(args, "num_points", None),
            "eps_init": getattr(args, "eps_init", None),
            "max_search": getattr(args, "max_search", None),
            "max_level": getattr(args, "max_level", None),
            "max_clique": getattr(args, "max_clique", None),
            "dp": getattr(args, "dp", None),
        }
        if args.command == "train" and args.data:
            overrides["data"] = args.data
        cfg = load_config(args.config, **overrides)
        return _COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"treecert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError, OSError, ValueError) as exc:
        print(f"treecert: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (VerificationError, AssertionError) as exc:
        print(f"treecert: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
