"""Experiment matrix: size/depth/precision sweeps, per-group sensitivity,
and the effective compression ratio.

A sweep point is one (architecture, seed) pair. Its pipeline is: train a
float network, evaluate, then for each precision setting direct-quantize the
SAME trained float weights and optionally retrain. Every emitted record
carries the full key (family, size descriptor, depth, mode, precision, seed)
so aggregation is order-independent; records are sorted before serialization
and all randomness is derived from the base seed, which makes whole sweeps
reproducible byte for byte.

The effective compression ratio of a quantized network is

    ECR = (effective params x 32) / (total weight bits)

where "effective params" is the parameter count at which the float baseline
curve reaches the same validation metric the quantized network achieved,
found by piecewise-linear interpolation over the curve's monotone envelope.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import DatasetSplit
from .errors import ConfigError
from .nn import Network, build_cnn, build_ffdnn, count_params, count_weight_bits
from .quantizer import direct_quantize
from .tensor import derive_seed
from .trainer import TrainConfig, evaluate, retrain_config, retrain_quantized, train_float

FLOAT_BITS = 32
DEFAULT_SEED_REPS = 3
DEPTH_SWEEP_WIDTH = 512

RECORD_FIELDS = [
    "family",
    "width_or_maps",
    "depth",
    "mode",
    "n_bits",
    "seed",
    "param_count",
    "total_weight_bits",
    "val_metric",
    "test_metric",
]
ECR_FIELDS = RECORD_FIELDS + ["effective_params", "effective_bits", "ecr", "clamped"]

MODES = ("float", "direct", "retrained")


@dataclass(frozen=True)
class SweepRecord:
    """One evaluated network configuration."""

    family: str  # ffdnn | cnn
    width_or_maps: str  # hidden units, or map counts joined by '-'
    depth: int
    mode: str  # float | direct | retrained
    n_bits: int  # 32 for float
    seed: int
    param_count: int
    total_weight_bits: int
    val_metric: float
    test_metric: float

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "float" and self.n_bits != FLOAT_BITS:
            raise ConfigError(
                f"float records must carry n_bits={FLOAT_BITS}, got {self.n_bits}"
            )

    def sort_key(self):
        return (
            self.family,
            self.depth,
            self.param_count,
            self.width_or_maps,
            self.mode,
            self.n_bits,
            self.seed,
        )


@dataclass(frozen=True)
class FloatBaselineCurve:
    """Float metric as a function of parameter count for one family.

    ``scale`` selects the interpolation axis for effective_params: "linear"
    interpolates param_count directly, "log2" interpolates log2(param_count).
    """

    points: tuple[tuple[int, float], ...]
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in ("linear", "log2"):
            raise ConfigError(f"unknown interpolation scale {self.scale!r}")
        counts = [p for p, _ in self.points]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ConfigError("curve param_counts must be strictly increasing")
        if any(p <= 0 for p in counts):
            raise ConfigError("curve param_counts must be positive")


# ---------------------------------------------------------------------------
# Sweep execution
# ---------------------------------------------------------------------------


def _build_net(family: str, size, depth: int, classes: int, input_shape, seed: int):
    if family == "ffdnn":
        if len(input_shape) != 1:
            raise ConfigError(
                f"ffdnn needs flat features, got input shape {input_shape}"
            )
        return build_ffdnn(input_shape[0], int(size), depth, classes, seed=seed)
    if family == "cnn":
        if len(input_shape) != 3:
            raise ConfigError(
                f"cnn needs [C, H, W] features, got input shape {input_shape}"
            )
        maps = [int(m) for m in size]
        return build_cnn(maps, input_shape=input_shape, classes=classes, seed=seed)
    raise ConfigError(f"unknown family {family!r} (expected ffdnn or cnn)")


def _size_label(family: str, size) -> str:
    if family == "cnn":
        return "-".join(str(int(m)) for m in size)
    return str(int(size))


def _run_point(args) -> list[SweepRecord]:
    """Full pipeline for one (architecture, seed) sweep point."""
    family, size, depth, bit_list, modes, data, cfg, point_seed = args
    classes = data.train.class_count
    input_shape = data.train.features.shape[1:]
    net = _build_net(family, size, depth, classes, input_shape, seed=point_seed)
    point_cfg = dataclasses.replace(cfg, seed=point_seed)
    trained, _ = train_float(net, data, point_cfg)
    params = count_params(trained)
    label = _size_label(family, size)
    records: list[SweepRecord] = []

    def record(mode: str, bits: int, network: Network) -> SweepRecord:
        return SweepRecord(
            family=family,
            width_or_maps=label,
            depth=depth,
            mode=mode,
            n_bits=bits,
            seed=point_seed,
            param_count=params,
            total_weight_bits=count_weight_bits(network, bits),
            val_metric=evaluate(network, data.valid),
            test_metric=evaluate(network, data.test),
        )

    if "float" in modes:
        records.append(record("float", FLOAT_BITS, trained))
    for bits in bit_list:
        qnet, _ = direct_quantize(trained, bits)
        if "direct" in modes:
            records.append(record("direct", bits, qnet))
        if "retrained" in modes:
            rnet, _ = retrain_quantized(qnet, data, retrain_config(point_cfg))
            records.append(record("retrained", bits, rnet))
    return records


def _run_points(points: list, jobs: int) -> list[SweepRecord]:
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_point, points))
    else:
        chunks = [_run_point(p) for p in points]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=SweepRecord.sort_key)
    return records


def _check_modes(modes: Iterable[str]) -> tuple[str, ...]:
    modes = tuple(modes)
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ConfigError(f"unknown modes {unknown}; valid modes are {list(MODES)}")
    if not modes:
        raise ConfigError("at least one mode is required")
    return modes


def _check_bits(bit_list: Sequence[int], modes) -> list[int]:
    bits = [int(b) for b in bit_list]
    if any(b < 2 or b > 8 for b in bits):
        raise ConfigError(f"bit widths must lie in [2, 8], got {bit_list}")
    if not bits and set(modes) != {"float"}:
        raise ConfigError("direct/retrained modes need a non-empty bit list")
    return bits


def run_width_sweep(
    family: str,
    sizes: Sequence,
    bit_list: Sequence[int],
    modes: Iterable[str],
    data: DatasetSplit,
    cfg: TrainConfig,
    depth: int = 1,
    seed_reps: int = DEFAULT_SEED_REPS,
    jobs: int = 1,
) -> list[SweepRecord]:
    """Train/quantize/retrain across network sizes and precisions.

    ``sizes`` holds hidden-unit counts (ffdnn) or feature-map count lists
    (cnn). Each size runs ``seed_reps`` independent seeds; float weights are
    trained once per (size, seed) and reused for every precision setting.
    """
    modes = _check_modes(modes)
    bits = _check_bits(bit_list, modes)
    if not sizes:
        raise ConfigError("sizes must be non-empty")
    points = []
    for size in sizes:
        label = _size_label(family, size)
        for rep in range(seed_reps):
            point_seed = derive_seed(cfg.seed, f"{family}|w{label}|d{depth}|s{rep}")
            points.append((family, size, depth, bits, modes, data, cfg, point_seed))
    return _run_points(points, jobs)


def run_depth_sweep(
    family: str,
    depths: Sequence[int],
    bit_list: Sequence[int],
    modes: Iterable[str],
    data: DatasetSplit,
    cfg: TrainConfig,
    width: int = DEPTH_SWEEP_WIDTH,
    base_maps: Sequence[int] = (32, 32, 64),
    seed_reps: int = DEFAULT_SEED_REPS,
    jobs: int = 1,
) -> list[SweepRecord]:
    """Sweep layer count at fixed width.

    ffdnn: ``depths`` are hidden-layer counts at ``width`` units each.
    cnn: depth d uses the last d entries of ``base_maps``.
    """
    modes = _check_modes(modes)
    bits = _check_bits(bit_list, modes)
    if not depths:
        raise ConfigError("depths must be non-empty")
    points = []
    for depth in depths:
        depth = int(depth)
        if family == "cnn":
            if not 1 <= depth <= len(base_maps):
                raise ConfigError(
                    f"cnn depth {depth} needs 1..{len(base_maps)} "
                    f"(base maps {list(base_maps)})"
                )
            size = list(base_maps)[-depth:]
        else:
            if depth < 0:
                raise ConfigError(f"ffdnn depth must be >= 0, got {depth}")
            size = width
        label = _size_label(family, size)
        for rep in range(seed_reps):
            point_seed = derive_seed(cfg.seed, f"{family}|w{label}|d{depth}|s{rep}")
            points.append((family, size, depth, bits, modes, data, cfg, point_seed))
    return _run_points(points, jobs)


# ---------------------------------------------------------------------------
# Per-group sensitivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityRow:
    groups: tuple[str, ...]  # empty tuple = float reference
    n_bits: int
    val_metric: float
    delta_vs_float: float


def run_group_sensitivity(
    net: Network,
    n_bits: int,
    group_subsets: Sequence[Sequence[str]],
    eval_ds,
) -> list[SensitivityRow]:
    """Quantize one group subset at a time, always from the same float net.

    The empty subset evaluates the float network itself and its metric is the
    reference the other rows' deltas are taken against.
    """
    float_metric = evaluate(net, eval_ds)
    rows = []
    for subset in group_subsets:
        subset = tuple(subset)
        if subset:
            qnet, _ = direct_quantize(net, n_bits, groups=list(subset))
            metric = evaluate(qnet, eval_ds)
        else:
            metric = evaluate(net, eval_ds)
        rows.append(
            SensitivityRow(
                groups=subset,
                n_bits=n_bits,
                val_metric=metric,
                delta_vs_float=metric - float_metric,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Effective parameters and compression ratio
# ---------------------------------------------------------------------------


def baseline_curve(
    records: Sequence[SweepRecord], family: str, scale: str = "linear"
) -> FloatBaselineCurve:
    """Median float validation metric per parameter count for one family."""
    by_size: dict[int, list[float]] = {}
    for r in records:
        if r.family == family and r.mode == "float":
            by_size.setdefault(r.param_count, []).append(r.val_metric)
    if not by_size:
        raise ConfigError(f"no float records for family {family!r}")
    points = tuple(
        (count, float(np.median(vals))) for count, vals in sorted(by_size.items())
    )
    return FloatBaselineCurve(points=points, scale=scale)


def effective_params(
    curve: FloatBaselineCurve, achieved_metric: float
) -> tuple[float, bool]:
    """Parameter count where the float baseline reaches the given metric.

    Interpolates over the curve's monotone envelope (cumulative minimum of
    the metric as size grows). Metrics outside the envelope's range clamp to
    the smallest or largest curve size; the second return value flags that.
    """
    if len(curve.points) == 0:
        raise ConfigError("empty baseline curve")
    if len(curve.points) < 2:
        raise ConfigError("baseline curve needs at least 2 points")
    counts = np.array([p for p, _ in curve.points], dtype=np.float64)
    metrics = np.minimum.accumulate([m for _, m in curve.points])
    if curve.scale == "log2":
        counts = np.log2(counts)
    if achieved_metric > metrics[0]:
        value, clamped = counts[0], True
    elif achieved_metric < metrics[-1]:
        value, clamped = counts[-1], True
    else:
        # first curve node whose envelope metric is as good as the target
        i = int(np.argmax(metrics <= achieved_metric))
        if metrics[i] == achieved_metric:
            value, clamped = counts[i], False
        else:
            t = (achieved_metric - metrics[i - 1]) / (metrics[i] - metrics[i - 1])
            value, clamped = counts[i - 1] + t * (counts[i] - counts[i - 1]), False
    if curve.scale == "log2":
        value = 2.0 ** value
    return float(value), clamped


def ecr(record: SweepRecord, curve: FloatBaselineCurve) -> float:
    """Effective compression ratio: effective float bits over actual bits."""
    if record.mode == "float":
        raise ConfigError("ECR is defined for quantized records only")
    if record.total_weight_bits <= 0:
        raise ConfigError("record has zero total weight bits")
    params, _ = effective_params(curve, record.val_metric)
    return params * FLOAT_BITS / record.total_weight_bits


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_row(r: SweepRecord) -> list[str]:
    return [_fmt(getattr(r, f)) for f in RECORD_FIELDS]


def write_records_csv(records: Sequence[SweepRecord], path: str) -> None:
    rows = sorted(records, key=SweepRecord.sort_key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for r in rows:
            writer.writerow(_record_row(r))


def parse_records_csv(path: str) -> list[SweepRecord]:
    """Inverse of write_records_csv; round-trips exactly."""
    from .errors import DataFormatError

    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty records file") from None
        if header != RECORD_FIELDS:
            raise DataFormatError(
                f"{path}: unexpected header {header}, wanted {RECORD_FIELDS}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RECORD_FIELDS):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(RECORD_FIELDS)} fields, "
                    f"found {len(row)}"
                )
            try:
                records.append(
                    SweepRecord(
                        family=row[0],
                        width_or_maps=row[1],
                        depth=int(row[2]),
                        mode=row[3],
                        n_bits=int(row[4]),
                        seed=int(row[5]),
                        param_count=int(row[6]),
                        total_weight_bits=int(row[7]),
                        val_metric=float(row[8]),
                        test_metric=float(row[9]),
                    )
                )
            except (ValueError, ConfigError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad record: {exc}") from exc
    return records


def write_ecr_csv(
    records: Sequence[SweepRecord],
    curves: dict[str, FloatBaselineCurve],
    path: str,
) -> None:
    """One row per quantized record with its effective size and ECR."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ECR_FIELDS)
        for r in records:
            if r.mode == "float":
                continue
            curve = curves[r.family]
            params, clamped = effective_params(curve, r.val_metric)
            writer.writerow(
                _record_row(r)
                + [
                    repr(params),
                    repr(params * FLOAT_BITS),
                    repr(ecr(r, curve)),
                    str(int(clamped)),
                ]
            )


def _median_by(records: Sequence[SweepRecord], metric: str):
    """Median metric per (family, width_or_maps, depth, mode, n_bits)."""
    acc: dict[tuple, list[float]] = {}
    for r in records:
        key = (r.family, r.width_or_maps, r.depth, r.mode, r.n_bits)
        acc.setdefault(key, []).append(getattr(r, metric))
    return {k: float(np.median(v)) for k, v in acc.items()}


def emit_report(
    records: Sequence[SweepRecord],
    out_dir: str,
    curves: dict[str, FloatBaselineCurve] | None = None,
    scale: str = "linear",
) -> list[str]:
    """Write records.csv, ecr.csv, plot-data CSVs, and summary.md.

    ``curves`` defaults to baselines built from the float records present.
    Returns the list of file paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    records = sorted(records, key=SweepRecord.sort_key)
    written = []

    path = os.path.join(out_dir, "records.csv")
    write_records_csv(records, path)
    written.append(path)

    quantized = [r for r in records if r.mode != "float"]
    families_needing_curves = sorted({r.family for r in quantized})
    if curves is None:
        curves = {}
        for family in families_needing_curves:
            curves[family] = baseline_curve(records, family, scale=scale)
    missing = [f for f in families_needing_curves if f not in curves]
    if missing:
        raise ConfigError(f"no float baseline curve for families {missing}")

    path = os.path.join(out_dir, "ecr.csv")
    write_ecr_csv(quantized, curves, path)
    written.append(path)

    med_val = _median_by(records, "val_metric")
    path = os.path.join(out_dir, "plot_bits_vs_error.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "width_or_maps", "depth", "mode", "n_bits",
                         "val_metric"])
        for key in sorted(med_val):
            writer.writerow([*map(str, key), repr(med_val[key])])
    written.append(path)

    path = os.path.join(out_dir, "plot_size_vs_error.csv")
    by_key: dict[tuple, list[SweepRecord]] = {}
    for r in records:
        by_key.setdefault(
            (r.family, r.width_or_maps, r.depth, r.mode, r.n_bits), []
        ).append(r)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "mode", "n_bits", "param_count",
                         "total_weight_bits", "val_metric"])
        rows = []
        for key, group in by_key.items():
            family, _, _, mode, bits = key
            rows.append(
                (
                    family,
                    mode,
                    bits,
                    group[0].param_count,
                    group[0].total_weight_bits,
                    float(np.median([r.val_metric for r in group])),
                )
            )
        for row in sorted(rows):
            writer.writerow([str(v) if not isinstance(v, float) else repr(v)
                             for v in row])
    written.append(path)

    path = os.path.join(out_dir, "summary.md")
    written.append(path)
    _write_summary(records, curves, path)
    return written


def _size_sort_key(size: str):
    """Numeric ordering for sizes like "8" or "32-32-64"; strings last."""
    parts = size.split("-")
    if all(p.isdigit() for p in parts):
        return (0, tuple(int(p) for p in parts), size)
    return (1, (), size)


def _write_summary(records, curves, path) -> None:
    med_test = _median_by(records, "test_metric")
    arches = sorted(
        {(r.family, r.width_or_maps, r.depth) for r in records},
        key=lambda a: (a[0], a[2], _size_sort_key(a[1])),
    )
    bit_settings = sorted({r.n_bits for r in records if r.mode != "float"})
    lines = ["# Quantization sweep summary", ""]
    lines.append(
        "Median test error (%) over seeds. Difference is retrained minus float."
    )
    lines.append("")
    for bits in bit_settings:
        lines.append(f"## {bits}-bit weights")
        lines.append("")
        lines.append("| Family | Size | Depth | Float | Direct | Retrained | Difference |")
        lines.append("|---|---|---|---|---|---|---|")
        for family, size, depth in arches:
            f = med_test.get((family, size, depth, "float", FLOAT_BITS))
            d = med_test.get((family, size, depth, "direct", bits))
            r = med_test.get((family, size, depth, "retrained", bits))
            if d is None and r is None:
                continue
            diff = (
                f"{r - f:+.2f}" if (r is not None and f is not None) else ""
            )
            cells = [
                family,
                size,
                str(depth),
                "" if f is None else f"{f:.2f}",
                "" if d is None else f"{d:.2f}",
                "" if r is None else f"{r:.2f}",
                diff,
            ]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
