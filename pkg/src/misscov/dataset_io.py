"""Dataset and results files.

A dataset is a directory holding ``manifest.json`` (shape, labels, channel
names, sampling rate, scenario record, seeds) and one CSV per trial with
rows = channels and columns = samples; the literal token ``NaN`` marks a
missing entry, so the mask travels in-band. Floats are written with
``repr`` so observed values round-trip exactly.

Results are a CSV with header
``scenario,pipeline,missing_ratio,fold,accuracy,wall_time_ms`` plus an
aggregated ``*_summary.csv`` next to it. Rows are written in canonical
sorted order so equal runs produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .covariance import Trial
from .errors import DatasetFormatError, IncompleteInputError
from .simulation import LabeledDataset, ScenarioSpec

MANIFEST_NAME = "manifest.json"
RESULTS_HEADER = "scenario,pipeline,missing_ratio,fold,accuracy,wall_time_ms"
SUMMARY_HEADER = "scenario,pipeline,missing_ratio,n_folds,mean_accuracy,std_accuracy"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trial_csv(trial: Trial, path) -> None:
    """One trial as CSV; unobserved entries become the token NaN."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for i in range(trial.n_channels):
            cells = [
                _fmt(trial.values[i, j]) if trial.observed[i, j] else "NaN"
                for j in range(trial.n_samples)
            ]
            fh.write(",".join(cells) + "\n")


def read_trial_csv(path, expected_shape: tuple[int, int] | None = None) -> Trial:
    """Parse a trial CSV; malformed content raises with line/column context."""
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {width} values, got {len(tokens)}"
                )
            row = []
            for col, tok in enumerate(tokens):
                try:
                    val = float(tok)
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: column {col}: invalid value {tok!r}"
                    ) from None
                if math.isinf(val):
                    raise DatasetFormatError(
                        f"{path}:{lineno}: column {col}: infinite values are not allowed"
                    )
                row.append(val)
            rows.append(row)
    if not rows:
        raise DatasetFormatError(f"{path}: trial file is empty")
    values = np.asarray(rows, dtype=float)
    if expected_shape is not None and values.shape != expected_shape:
        raise DatasetFormatError(
            f"{path}: trial shape {values.shape} does not match manifest {expected_shape}"
        )
    try:
        return Trial.from_nan_values(values)
    except IncompleteInputError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


def write_dataset(dataset: LabeledDataset, path, overwrite: bool = False) -> Path:
    """Write a dataset directory; refuses to clobber an existing manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest_path = path / MANIFEST_NAME
    if manifest_path.exists() and not overwrite:
        raise DatasetFormatError(f"{manifest_path} already exists (pass overwrite=True)")
    digits = max(4, len(str(dataset.n_trials - 1)))
    entries = []
    for i, trial in enumerate(dataset.trials):
        name = f"trial_{i:0{digits}d}.csv"
        write_trial_csv(trial, path / name)
        entries.append({"file": name, "label": int(dataset.labels[i])})
    manifest = {
        "format_version": 1,
        "p": dataset.p,
        "n": dataset.n,
        "L": dataset.n_trials,
        "Z": dataset.n_classes,
        "channel_names": list(dataset.channel_names),
        "sampling_rate_hz": dataset.sampling_rate_hz,
        "scenario": dataset.scenario.to_manifest() if dataset.scenario else None,
        "seeds": dataset.seeds or {},
        "trials": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_dataset(path) -> LabeledDataset:
    """Read a dataset directory written by :func:`write_dataset`."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetFormatError(f"{manifest_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    for key in ("p", "n", "L", "channel_names", "sampling_rate_hz", "trials"):
        if key not in manifest:
            raise DatasetFormatError(f"{manifest_path}: missing key {key!r}")
    entries = manifest["trials"]
    if len(entries) != manifest["L"]:
        raise DatasetFormatError(
            f"{manifest_path}: manifest says L={manifest['L']} but lists {len(entries)} trials"
        )
    shape = (int(manifest["p"]), int(manifest["n"]))
    trials = []
    labels = []
    for entry in entries:
        trials.append(read_trial_csv(path / entry["file"], expected_shape=shape))
        labels.append(int(entry["label"]))
    scenario = manifest.get("scenario")
    return LabeledDataset(
        trials=trials,
        labels=np.asarray(labels),
        channel_names=tuple(manifest["channel_names"]),
        sampling_rate_hz=float(manifest["sampling_rate_hz"]),
        scenario=ScenarioSpec.from_manifest(scenario) if scenario else None,
        seeds=manifest.get("seeds") or {},
    )


def datasets_equal(a: LabeledDataset, b: LabeledDataset) -> bool:
    """Equality up to sentinels: masks, observed values, labels and metadata."""
    return (
        a.n_trials == b.n_trials
        and np.array_equal(a.labels, b.labels)
        and tuple(a.channel_names) == tuple(b.channel_names)
        and a.sampling_rate_hz == b.sampling_rate_hz
        and all(x.equals(y) for x, y in zip(a.trials, b.trials))
    )


def _row_key(row):
    return (row.scenario, row.pipeline, row.missing_ratio, row.fold)


def write_results(table, path, include_timings: bool = False) -> Path:
    """Write a results CSV plus its ``*_summary.csv`` aggregate.

    Wall times vary run to run, so they are written only when
    ``include_timings`` is set; the default output is byte-reproducible for
    equal configs and seeds.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [RESULTS_HEADER]
    for row in sorted(table.rows, key=_row_key):
        wall = _fmt(row.wall_time_ms) if include_timings else ""
        lines.append(
            f"{row.scenario},{row.pipeline},{_fmt(row.missing_ratio)},{row.fold},"
            f"{_fmt(row.accuracy)},{wall}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary_path = path.with_name(path.stem + "_summary.csv")
    slines = [SUMMARY_HEADER]
    for cell in table.aggregate():
        slines.append(
            f"{cell.scenario},{cell.pipeline},{_fmt(cell.missing_ratio)},{cell.n_folds},"
            f"{_fmt(cell.mean_accuracy)},{_fmt(cell.std_accuracy)}"
        )
    summary_path.write_text("\n".join(slines) + "\n", encoding="utf-8")
    return path


def read_results(path):
    """Parse a results CSV back into a ResultsTable."""
    from .benchmark import ResultRow, ResultsTable

    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RESULTS_HEADER:
            raise DatasetFormatError(f"{path}:1: unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise DatasetFormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                rows.append(
                    ResultRow(
                        scenario=parts[0],
                        pipeline=parts[1],
                        missing_ratio=float(parts[2]),
                        fold=int(parts[3]),
                        accuracy=float(parts[4]),
                        wall_time_ms=float(parts[5]) if parts[5] else float("nan"),
                    )
                )
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    return ResultsTable(rows=tuple(rows))
