"""
Dataset ingestion, validation and TIC normalization.
"""

import csv
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from multipfa.errors import DatasetError, InputOutputError
from multipfa.states import Dataset, ValidationFailure, ValidationReport
from multipfa.tools import write_frame_atomic

logger = logging.getLogger(__name__)


# utf-8-sig drops the byte-order mark that spreadsheet exports prepend.
ENCODING = "utf-8-sig"


def _read_header(path: Path) -> list[str]:
    with open(path, "r", encoding=ENCODING, newline="") as f:
        return [h.strip() for h in next(csv.reader(f, skipinitialspace=True), [])]


def _parse_column(values: pd.Series, name: str) -> np.ndarray:
    try:
        column = values.to_numpy(dtype=object).astype(np.float64)
    except ValueError:
        column = None
    if column is not None and np.isfinite(column).all():
        return column
    for row, cell in enumerate(values, start=1):
        try:
            number = float(cell)
        except ValueError:
            raise DatasetError(
                f"non-numeric value {cell!r} at row {row}, column {name!r}"
            ) from None
        if not np.isfinite(number):
            raise DatasetError(f"non-finite value {cell!r} at row {row}, column {name!r}")
    raise DatasetError(f"could not parse column {name!r}")


def _encode_labels(labels: pd.Series) -> tuple[np.ndarray, list[str]]:
    """
    Labels that are exactly the integers 1..q keep their values as codes;
    anything else is coded by first appearance.
    """
    as_int = pd.to_numeric(labels, errors="coerce")
    if as_int.notna().all() and (as_int == as_int.round()).all():
        codes = as_int.astype(np.int64).to_numpy()
        distinct = set(codes.tolist())
        if distinct == set(range(1, len(distinct) + 1)):
            return codes, [str(c) for c in range(1, len(distinct) + 1)]

    order: dict[str, int] = {}
    for value in labels:
        order.setdefault(value, len(order) + 1)
    codes = labels.map(order).to_numpy(dtype=np.int64)
    return codes, list(order)


def _resolve_baseline(baseline: Optional[str | int], categories: list[str]) -> int:
    q = len(categories)
    if baseline is None or baseline == "":
        return q
    if str(baseline) in categories:
        return categories.index(str(baseline)) + 1
    try:
        code = int(baseline)
    except (TypeError, ValueError):
        raise DatasetError(f"baseline {baseline!r} is not a known category") from None
    if not 1 <= code <= q:
        raise DatasetError(f"baseline code {code} outside 1..{q}")
    return code


def load_dataset(
    path: str | Path, label_column: str, baseline: Optional[str | int] = None
) -> Dataset:
    """
    Load a CSV feature matrix with one nominal label column.

    Args:
        path: CSV file with a mandatory header row
        label_column: Name of the response column
        baseline: Baseline category as label or code (default: last code)

    Returns:
        A validated Dataset; feature order follows the CSV column order
    """
    path = Path(path)
    if not path.is_file():
        raise InputOutputError(f"input file not found: {path}")

    try:
        header = _read_header(path)
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, encoding=ENCODING, skipinitialspace=True
        )
    except (OSError, UnicodeDecodeError) as e:
        raise InputOutputError(f"failed to read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetError(f"malformed CSV {path}: {e}") from e

    duplicates = sorted({h for h in header if header.count(h) > 1})
    if duplicates:
        raise DatasetError(f"duplicate column names: {duplicates}")
    if header.count(label_column) != 1:
        raise DatasetError(f"label column {label_column!r} not found in {path}")
    if len(header) != frame.shape[1]:
        raise DatasetError(
            f"malformed CSV {path}: {len(header)} header names for {frame.shape[1]} columns"
        )
    frame.columns = header

    labels = frame[label_column].astype(str).str.strip()
    keep = labels != ""
    if not keep.all():
        logger.warning("Dropping %d rows with an empty label", int((~keep).sum()))
        frame, labels = frame[keep], labels[keep]

    codes, categories = _encode_labels(labels)
    if len(categories) < 2:
        raise DatasetError("q < 2: the label column has fewer than two categories")

    names = [h for h in header if h != label_column]
    features = np.column_stack(
        [_parse_column(frame[name], name) for name in names]
    ) if names else np.empty((len(frame), 0))

    dataset = Dataset(
        features=features,
        response=codes,
        q=len(categories),
        feature_names=names,
        categories=categories,
        baseline=_resolve_baseline(baseline, categories),
    )

    report = validate(dataset)
    if not report.passed:
        raise DatasetError("; ".join(f.message for f in report.failures))

    logger.info(
        "Loaded %s: n=%d, p=%d, q=%d", path.name, dataset.n, dataset.p, dataset.q
    )
    return dataset


def write_dataset(d: Dataset, path: str | Path, label_column: str = "label") -> Path:
    """Write a Dataset back to CSV in the layout load_dataset reads."""
    frame = pd.DataFrame(d.features, columns=d.feature_names)
    frame[label_column] = [d.categories[c - 1] for c in d.response]
    return write_frame_atomic(Path(path), frame)


def tic_normalize(d: Dataset) -> Dataset:
    """Divide every row by its total ion count (row sum)."""
    x = np.asarray(d.features, dtype=float)

    negative = np.argwhere(x < 0)
    if negative.size:
        row, col = negative[0]
        raise DatasetError(f"negative entry at row {row}, column {col}")

    totals = x.sum(axis=1)
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        raise DatasetError(f"all-zero row at index {int(empty[0])}")

    return d.model_copy(update={"features": x / totals[:, None]})


def validate(d: Dataset) -> ValidationReport:
    """
    Check every Dataset invariant without raising.

    Constant columns are reported separately: they are not a failure, but no
    marginal model can be fitted on them.
    """
    failures: list[ValidationFailure] = []
    x = np.asarray(d.features)
    y = np.asarray(d.response)

    bad_cells = np.argwhere(~np.isfinite(x))
    if bad_cells.size:
        failures.append(
            ValidationFailure(
                invariant="finite_features",
                message=f"{len(bad_cells)} non-finite feature cells",
                locations=bad_cells.tolist(),
            )
        )

    bad_rows = np.flatnonzero((y < 1) | (y > d.q))
    if bad_rows.size:
        failures.append(
            ValidationFailure(
                invariant="response_codes",
                message=f"{bad_rows.size} response codes outside 1..{d.q}",
                locations=[[int(r)] for r in bad_rows],
            )
        )

    counts = {
        d.categories[c - 1]: int(np.sum(y == c)) for c in range(1, d.q + 1)
    }
    empty = [c for c in range(1, d.q + 1) if not np.any(y == c)]
    if empty:
        failures.append(
            ValidationFailure(
                invariant="categories_present",
                message=f"categories {empty} have zero occurrences",
                locations=[[c] for c in empty],
            )
        )

    if x.shape[0] < d.q + 2:
        failures.append(
            ValidationFailure(
                invariant="sample_size",
                message=f"n={x.shape[0]} is below q+2={d.q + 2}",
            )
        )

    if len(y) != x.shape[0]:
        failures.append(
            ValidationFailure(
                invariant="response_length",
                message=f"response has {len(y)} entries for {x.shape[0]} rows",
            )
        )

    if len(d.feature_names) != x.shape[1] or len(set(d.feature_names)) != len(
        d.feature_names
    ):
        failures.append(
            ValidationFailure(
                invariant="feature_names",
                message=f"expected {x.shape[1]} distinct feature names",
            )
        )

    constant = []
    for j in range(x.shape[1]):
        column = x[:, j][np.isfinite(x[:, j])]
        if column.size and column.max() == column.min():
            constant.append(j)

    return ValidationReport(
        failures=failures, category_counts=counts, constant_columns=constant
    )
