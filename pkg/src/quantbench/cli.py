"""Command-line entry point.

    quantbench train|quantize|retrain|sweep|ecr|report --config FILE
               [--out DIR] [--jobs N] [--seed N]

One JSON config per experiment. Unknown keys anywhere in the document are
errors (catches sweep-definition typos); error messages carry the offending
field path. Seed precedence: --seed flag, then the QUANTBENCH_SEED
environment variable, then the config's "seed" key.

Exit codes: 0 success, 2 config or usage error, 3 data format error,
4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSplit, load_cifar10, load_csv, synthetic_split
from .errors import ConfigError, DataFormatError, DivergenceError, QuantbenchError
from .experiments import (
    SweepRecord,
    baseline_curve,
    emit_report,
    parse_records_csv,
    run_depth_sweep,
    run_width_sweep,
    write_ecr_csv,
    write_records_csv,
)
from .nn import build_cnn, build_ffdnn, count_params, set_dropout_rate
from .quantizer import bits_to_levels, direct_quantize, write_reports
from .tensor import Tensor
from .trainer import (
    TrainConfig,
    evaluate,
    retrain_quantized,
    train_float,
    write_train_log,
)

SEED_ENV = "QUANTBENCH_SEED"

FLOAT_CKPT = "float.ckpt"
RETRAINED_CKPT = "retrained.ckpt"


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------


def _type_name(value) -> str:
    return type(value).__name__


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {_type_name(value)}")
    return value


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {_type_name(value)}")
    return float(value)


def _as_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {_type_name(value)}")
    return value


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected true or false, got {_type_name(value)}")
    return value


def _as_int_list(value, path: str) -> list[int]:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {_type_name(value)}")
    return [_as_int(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _as_str_list(value, path: str) -> list[str]:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {_type_name(value)}")
    return [_as_str(v, f"{path}[{i}]") for i, v in enumerate(value)]


_CASTS = {
    "int": _as_int,
    "float": _as_float,
    "str": _as_str,
    "bool": _as_bool,
    "int_list": _as_int_list,
    "str_list": _as_str_list,
}


def _check_block(block, schema: dict[str, str], path: str) -> dict:
    """Validate one config block: unknown keys are errors, types are cast."""
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object, got {_type_name(block)}")
    out = {}
    for key, value in block.items():
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ConfigError(f"{path}.{key}: unknown key (known keys: {known})")
        out[key] = _CASTS[schema[key]](value, f"{path}.{key}")
    return out


_TOP_SCHEMA = {
    "seed": "int",
    "out_dir": "str",
    "dataset": "block",
    "network": "block",
    "train": "block",
    "quant": "block",
    "sweep": "block",
    "ecr": "block",
    "report": "block",
}

_DATASET_SCHEMA = {
    "kind": "str",
    "path": "str",
    "labels_path": "str",
    "valid_path": "str",
    "test_path": "str",
    "n_train": "int",
    "n_valid": "int",
    "n_test": "int",
    "classes": "int",
    "dim": "int",
    "spread": "float",
    "shape": "int_list",
    "seed": "int",
}

_NETWORK_SCHEMA = {
    "family": "str",
    "hidden_units": "int",
    "hidden_layers": "int",
    "map_counts": "int_list",
    "fc_units": "int",
    "dropout_rate": "float",
}

_TRAIN_SCHEMA = {
    "batch_size": "int",
    "lr_init": "float",
    "lr_final": "float",
    "lr_decay": "float",
    "momentum": "float",
    "rmsprop_rho": "float",
    "rmsprop_eps": "float",
    "max_epochs": "int",
    "patience": "int",
    "seed": "int",
    "dropout_active": "bool",
}

_QUANT_SCHEMA = {
    "checkpoint": "str",
    "n_bits": "int",
    "bits": "int_list",
    "groups": "groups",  # "all" or list of names; handled specially
}

_SWEEP_SCHEMA = {
    "axis": "str",
    "sizes": "sizes",  # ints (ffdnn) or lists of ints (cnn); handled specially
    "depths": "int_list",
    "modes": "str_list",
    "seed_reps": "int",
    "width": "int",
    "base_maps": "int_list",
    "scale": "str",
}

_RECORDS_SCHEMA = {
    "records": "str",
    "scale": "str",
}


def load_config(path: str) -> dict:
    """Read and validate an experiment config; returns the checked document."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    cfg: dict = {}
    for key, value in raw.items():
        if key not in _TOP_SCHEMA:
            known = ", ".join(sorted(_TOP_SCHEMA))
            raise ConfigError(f"{key}: unknown key (known keys: {known})")
        if _TOP_SCHEMA[key] != "block":
            cfg[key] = _CASTS[_TOP_SCHEMA[key]](value, key)
    if "dataset" in raw:
        cfg["dataset"] = _check_block(raw["dataset"], _DATASET_SCHEMA, "dataset")
    if "network" in raw:
        cfg["network"] = _check_block(raw["network"], _NETWORK_SCHEMA, "network")
    if "train" in raw:
        cfg["train"] = _check_block(raw["train"], _TRAIN_SCHEMA, "train")
    if "quant" in raw:
        block = dict(raw["quant"])
        groups = block.pop("groups", None)
        cfg["quant"] = _check_block(
            block, {k: v for k, v in _QUANT_SCHEMA.items() if v != "groups"}, "quant"
        )
        if groups is not None:
            if groups != "all" and not isinstance(groups, list):
                raise ConfigError('quant.groups: expected "all" or a list of names')
            if isinstance(groups, list):
                groups = _as_str_list(groups, "quant.groups")
            cfg["quant"]["groups"] = groups
    if "sweep" in raw:
        block = dict(raw["sweep"])
        sizes = block.pop("sizes", None)
        cfg["sweep"] = _check_block(
            block, {k: v for k, v in _SWEEP_SCHEMA.items() if v != "sizes"}, "sweep"
        )
        if sizes is not None:
            cfg["sweep"]["sizes"] = _parse_sizes(sizes)
    for key in ("ecr", "report"):
        if key in raw:
            cfg[key] = _check_block(raw[key], _RECORDS_SCHEMA, key)
    _validate_references(cfg)
    return cfg


def _parse_sizes(sizes) -> list:
    if not isinstance(sizes, list) or not sizes:
        raise ConfigError("sweep.sizes: expected a non-empty list")
    if all(isinstance(s, list) for s in sizes):
        return [_as_int_list(s, f"sweep.sizes[{i}]") for i, s in enumerate(sizes)]
    return _as_int_list(sizes, "sweep.sizes")


def _expected_groups(network: dict) -> list[str]:
    """Weight-group names the declared architecture will create."""
    family = network.get("family")
    if family == "ffdnn":
        depth = network.get("hidden_layers", 1)
        if depth == 0:
            return ["In-out"]
        names = []
        prev = "In"
        for i in range(1, depth + 1):
            names.append(f"{prev}-h{i}")
            prev = f"h{i}"
        names.append(f"{prev}-out")
        return names
    if family == "cnn":
        maps = network.get("map_counts", [])
        return [f"C{i}" for i in range(1, len(maps) + 1)] + ["FC", "Out"]
    raise ConfigError(
        f"network.family: expected 'ffdnn' or 'cnn', got {family!r}"
    )


def _validate_references(cfg: dict) -> None:
    """Cross-block checks that must fail before any work starts."""
    quant = cfg.get("quant", {})
    groups = quant.get("groups")
    if isinstance(groups, list) and "network" in cfg:
        known = _expected_groups(cfg["network"])
        unknown = [g for g in groups if g not in known]
        if unknown:
            raise ConfigError(
                f"quant.groups: unknown group(s) {unknown} for the declared "
                f"network (expected among {known})"
            )
    sweep = cfg.get("sweep", {})
    if "modes" in sweep:
        bad = [m for m in sweep["modes"] if m not in ("float", "direct", "retrained")]
        if bad:
            raise ConfigError(f"sweep.modes: unknown mode(s) {bad}")
    if "scale" in sweep and sweep["scale"] not in ("linear", "log2"):
        raise ConfigError(f"sweep.scale: expected 'linear' or 'log2'")


# ---------------------------------------------------------------------------
# Config -> objects
# ---------------------------------------------------------------------------


def _require(block: dict, key: str, path: str):
    if key not in block:
        raise ConfigError(f"{path}.{key}: required key is missing")
    return block[key]


def _effective_seed(cfg: dict, flag_seed: int | None) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV} must be an integer, got {env!r}"
            ) from None
    return cfg.get("seed", 0)


def _build_split(cfg: dict, seed: int, seed_overridden: bool) -> DatasetSplit:
    if "dataset" not in cfg:
        raise ConfigError("dataset: required block is missing")
    ds = cfg["dataset"]
    kind = _require(ds, "kind", "dataset")
    if kind == "cifar10":
        return load_cifar10(_require(ds, "path", "dataset"))
    if kind == "csv":
        classes = ds.get("classes")
        train = load_csv(
            _require(ds, "path", "dataset"),
            ds.get("labels_path"),
            class_count=classes,
        )
        valid = load_csv(_require(ds, "valid_path", "dataset"), class_count=classes)
        test = load_csv(_require(ds, "test_path", "dataset"), class_count=classes)
        classes = max(train.class_count, valid.class_count, test.class_count)
        for part in (train, valid, test):
            part.class_count = classes
        return DatasetSplit(train=train, valid=valid, test=test)
    if kind in ("blobs", "spirals", "teacher_net"):
        ds_seed = seed if seed_overridden else ds.get("seed", seed)
        shape = ds.get("shape")
        return synthetic_split(
            kind,
            n_train=ds.get("n_train", 1000),
            n_valid=ds.get("n_valid", 300),
            n_test=ds.get("n_test", 300),
            classes=ds.get("classes", 4),
            seed=ds_seed,
            dim=ds.get("dim", 16),
            spread=ds.get("spread", 0.35),
            shape=tuple(shape) if shape else None,
        )
    raise ConfigError(
        f"dataset.kind: expected cifar10, csv, blobs, spirals, or teacher_net, "
        f"got {kind!r}"
    )


def _flatten_for_family(split: DatasetSplit, family: str) -> DatasetSplit:
    if family != "ffdnn":
        return split

    def flat(ds):
        f = ds.features.ndarray
        if f.ndim <= 2:
            return ds
        import dataclasses as dc

        return dc.replace(ds, features=Tensor._wrap(f.reshape(f.shape[0], -1)))

    return DatasetSplit(
        train=flat(split.train), valid=flat(split.valid), test=flat(split.test)
    )


def _build_network(cfg: dict, split: DatasetSplit, seed: int):
    if "network" not in cfg:
        raise ConfigError("network: required block is missing")
    nw = cfg["network"]
    family = _require(nw, "family", "network")
    input_shape = split.train.features.shape[1:]
    classes = split.train.class_count
    if family == "ffdnn":
        if len(input_shape) != 1:
            raise ConfigError(
                f"network.family: ffdnn needs flat features, got {input_shape}"
            )
        return build_ffdnn(
            input_shape[0],
            nw.get("hidden_units", 64),
            nw.get("hidden_layers", 1),
            classes,
            dropout_rate=nw.get("dropout_rate", 0.2),
            seed=seed,
        )
    if family == "cnn":
        if len(input_shape) != 3:
            raise ConfigError(
                f"network.family: cnn needs [C, H, W] features, got {input_shape}"
            )
        return build_cnn(
            _require(nw, "map_counts", "network"),
            input_shape=input_shape,
            fc_units=nw.get("fc_units", 64),
            classes=classes,
            seed=seed,
        )
    raise ConfigError(f"network.family: expected 'ffdnn' or 'cnn', got {family!r}")


def _train_config(cfg: dict, seed: int, seed_overridden: bool) -> TrainConfig:
    tr = dict(cfg.get("train", {}))
    if seed_overridden or "seed" not in tr:
        tr["seed"] = seed
    return TrainConfig(**tr)


def _out_dir(cfg: dict, flag_out: str | None) -> str:
    out = flag_out or cfg.get("out_dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: dict, out_dir: str, seed: int, seed_overridden: bool,
              jobs: int) -> int:
    split = _build_split(cfg, seed, seed_overridden)
    family = cfg.get("network", {}).get("family", "ffdnn")
    split = _flatten_for_family(split, family)
    tcfg = _train_config(cfg, seed, seed_overridden)
    net = _build_network(cfg, split, seed=tcfg.seed)
    best, log = train_float(net, split, tcfg)
    ckpt = os.path.join(out_dir, FLOAT_CKPT)
    save_checkpoint(best, ckpt)
    log_path = os.path.join(out_dir, "train_log.csv")
    write_train_log(log, log_path)
    val = evaluate(best, split.valid)
    test = evaluate(best, split.test)
    print(f"trained {family} ({count_params(best)} params): "
          f"val {val:.2f}% test {test:.2f}%")
    print(f"wrote {ckpt}")
    print(f"wrote {log_path}")
    return 0


def cmd_quantize(cfg: dict, out_dir: str, seed: int, seed_overridden: bool,
                 jobs: int) -> int:
    quant = cfg.get("quant", {})
    ckpt_in = _require(quant, "checkpoint", "quant")
    n_bits = _require(quant, "n_bits", "quant")
    bits_to_levels(n_bits)  # range check before touching the checkpoint
    groups = quant.get("groups", "all")
    net = load_checkpoint(ckpt_in)
    qnet, reports = direct_quantize(net, n_bits, groups=groups)
    ckpt_out = os.path.join(out_dir, f"quantized_{n_bits}bit.ckpt")
    save_checkpoint(qnet, ckpt_out)
    report_path = os.path.join(out_dir, "quant_report.csv")
    write_reports(reports, report_path)
    for rep in reports:
        print(f"group {rep.group}: M={rep.M} delta={rep.delta:.6g} "
              f"l2_error={rep.l2_error:.6g}")
    print(f"wrote {ckpt_out}")
    print(f"wrote {report_path}")
    return 0


def cmd_retrain(cfg: dict, out_dir: str, seed: int, seed_overridden: bool,
                jobs: int) -> int:
    quant = cfg.get("quant", {})
    ckpt_in = _require(quant, "checkpoint", "quant")
    net = load_checkpoint(ckpt_in)
    split = _build_split(cfg, seed, seed_overridden)
    family = cfg.get("network", {}).get("family", "ffdnn")
    split = _flatten_for_family(split, family)
    tcfg = _train_config(cfg, seed, seed_overridden)
    if "dropout_rate" in cfg.get("network", {}):
        set_dropout_rate(net, cfg["network"]["dropout_rate"])
    best, log = retrain_quantized(net, split, tcfg)
    ckpt_out = os.path.join(out_dir, RETRAINED_CKPT)
    save_checkpoint(best, ckpt_out)
    log_path = os.path.join(out_dir, "retrain_log.csv")
    write_train_log(log, log_path)
    val = evaluate(best, split.valid)
    print(f"retrained: val {val:.2f}% over {len(log.records)} epochs")
    print(f"wrote {ckpt_out}")
    print(f"wrote {log_path}")
    return 0


def cmd_sweep(cfg: dict, out_dir: str, seed: int, seed_overridden: bool,
              jobs: int) -> int:
    if "sweep" not in cfg:
        raise ConfigError("sweep: required block is missing")
    sw = cfg["sweep"]
    axis = sw.get("axis", "width")
    if axis not in ("width", "depth"):
        raise ConfigError(f"sweep.axis: expected 'width' or 'depth', got {axis!r}")
    family = cfg.get("network", {}).get("family", "ffdnn")
    split = _build_split(cfg, seed, seed_overridden)
    split = _flatten_for_family(split, family)
    tcfg = _train_config(cfg, seed, seed_overridden)
    bits = cfg.get("quant", {}).get("bits", [2])
    modes = sw.get("modes", ["float", "direct", "retrained"])
    reps = sw.get("seed_reps", 3)
    if axis == "width":
        sizes = _require(sw, "sizes", "sweep")
        records = run_width_sweep(
            family, sizes, bits, modes, split, tcfg,
            depth=cfg.get("network", {}).get("hidden_layers", 1),
            seed_reps=reps, jobs=jobs,
        )
    else:
        depths = _require(sw, "depths", "sweep")
        records = run_depth_sweep(
            family, depths, bits, modes, split, tcfg,
            width=sw.get("width", 512),
            base_maps=sw.get("base_maps", (32, 32, 64)),
            seed_reps=reps, jobs=jobs,
        )
    path = os.path.join(out_dir, "records.csv")
    write_records_csv(records, path)
    print(f"{len(records)} records")
    print(f"wrote {path}")
    return 0


def _load_records(cfg: dict, key: str, out_dir: str) -> tuple[list[SweepRecord], str]:
    block = cfg.get(key, {})
    path = block.get("records", os.path.join(out_dir, "records.csv"))
    if not os.path.exists(path):
        raise ConfigError(
            f"{key}.records: no records at {path}; run `quantbench sweep` first"
        )
    return parse_records_csv(path), block.get("scale", "linear")


def cmd_ecr(cfg: dict, out_dir: str, seed: int, seed_overridden: bool,
            jobs: int) -> int:
    records, scale = _load_records(cfg, "ecr", out_dir)
    quantized = [r for r in records if r.mode != "float"]
    curves = {}
    for family in sorted({r.family for r in quantized}):
        if not any(r.family == family and r.mode == "float" for r in records):
            raise ConfigError(
                f"no float baseline records for family {family!r}; rerun the "
                f"sweep with 'float' in sweep.modes"
            )
        curves[family] = baseline_curve(records, family, scale=scale)
    path = os.path.join(out_dir, "ecr.csv")
    write_ecr_csv(quantized, curves, path)
    print(f"{len(quantized)} quantized records")
    print(f"wrote {path}")
    return 0


def cmd_report(cfg: dict, out_dir: str, seed: int, seed_overridden: bool,
               jobs: int) -> int:
    records, scale = _load_records(cfg, "report", out_dir)
    files = emit_report(records, out_dir, scale=scale)
    for f in files:
        print(f"wrote {f}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "quantize": cmd_quantize,
    "retrain": cmd_retrain,
    "sweep": cmd_sweep,
    "ecr": cmd_ecr,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantbench",
        description="Fixed-point quantization benchmarks for small neural nets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel sweep workers (default 1)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override (beats QUANTBENCH_SEED and config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed_overridden = (
            args.seed is not None or os.environ.get(SEED_ENV) is not None
        )
        seed = _effective_seed(cfg, args.seed)
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        out_dir = _out_dir(cfg, args.out)
        return _COMMANDS[args.command](cfg, out_dir, seed, seed_overridden,
                                       args.jobs)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QuantbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
