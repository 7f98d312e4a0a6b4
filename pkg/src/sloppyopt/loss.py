"""Relative-error least-squares objective and the dataset table it is computed on."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

OBS_PREFIX = "obs_"


class DatasetError(ValueError):
    pass


def residuals(observed, predicted) -> np.ndarray:
    """Relative residuals ``(E - M) / E``."""
    e = np.asarray(observed, dtype=float)
    m = np.asarray(predicted, dtype=float)
    if e.shape != m.shape:
        raise ValueError(f"observed shape {e.shape} != predicted shape {m.shape}")
    if np.any(e == 0):
        raise DatasetError("observed values must be nonzero for relative residuals")
    return (e - m) / e


def objective(residual_vector, weights=None) -> float:
    """Half the (optionally weighted) sum of squared residuals."""
    r = np.asarray(residual_vector, dtype=float).reshape(-1)
    if weights is None:
        return 0.5 * float(r @ r)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != r.shape:
        raise ValueError("weights must match the residual vector")
    return 0.5 * float(np.sum(w * r * r))


@dataclass(frozen=True)
class Dataset:
    """Measured observables over a set of experimental conditions.

    ``inputs`` is ``(N, c)`` (one row of condition inputs per condition) and
    ``observed`` is ``(N, m)``. Residual vectors are flattened row-major, so
    entry ``i * m + j`` belongs to condition ``i`` and observable ``j``.
    """

    inputs: np.ndarray
    observed: np.ndarray
    input_names: tuple[str, ...]
    observable_names: tuple[str, ...]

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.observed, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if x.shape[0] != y.shape[0]:
            raise DatasetError("inputs and observed have a different number of conditions")
        if len(self.input_names) != x.shape[1] or len(self.observable_names) != y.shape[1]:
            raise DatasetError("column names do not match the data shape")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise DatasetError("dataset contains non-finite values")
        zero = np.argwhere(y == 0)
        if zero.size:
            i, j = zero[0]
            raise DatasetError(
                f"observable {self.observable_names[j]!r} is exactly 0 at condition {i}; "
                "relative residuals divide by the observed value"
            )
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "observed", y)
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "observable_names", tuple(self.observable_names))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def m(self) -> int:
        return self.observed.shape[1]

    def subset(self, index: Sequence[int]) -> "Dataset":
        idx = np.asarray(index, dtype=int)
        return Dataset(self.inputs[idx], self.observed[idx], self.input_names, self.observable_names)

    def condition_of(self, residual_index: int) -> tuple[int, int]:
        """(condition, observable) pair owning a flattened residual entry."""
        return divmod(int(residual_index), self.m)


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as CSV (observable columns prefixed ``obs_``) or JSON."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = {
            "inputs": {k: dataset.inputs[:, i].tolist() for i, k in enumerate(dataset.input_names)},
            "observed": {
                k: dataset.observed[:, j].tolist() for j, k in enumerate(dataset.observable_names)
            },
        }
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return
    header = list(dataset.input_names) + [OBS_PREFIX + k for k in dataset.observable_names]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(dataset.inputs, dataset.observed):
            w.writerow([repr(float(v)) for v in np.concatenate([x, y])])


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        try:
            ins, obs = doc["inputs"], doc["observed"]
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"{path}: JSON dataset needs 'inputs' and 'observed' objects") from exc
        x = np.column_stack([np.asarray(v, dtype=float) for v in ins.values()])
        y = np.column_stack([np.asarray(v, dtype=float) for v in obs.values()])
        return Dataset(x, y, tuple(ins), tuple(obs))
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    obs_cols = [i for i, h in enumerate(header) if h.startswith(OBS_PREFIX)]
    in_cols = [i for i, h in enumerate(header) if not h.startswith(OBS_PREFIX)]
    if not obs_cols:
        raise DatasetError(f"{path}: no observable columns (prefix {OBS_PREFIX!r})")
    try:
        data = np.array([[float(v) for v in row] for row in body], dtype=float)
    except ValueError as exc:
        raise DatasetError(f"{path}: non-numeric entry ({exc})") from exc
    data = data.reshape(len(body), len(header))
    return Dataset(
        data[:, in_cols],
        data[:, obs_cols],
        tuple(header[i] for i in in_cols),
        tuple(header[i][len(OBS_PREFIX):] for i in obs_cols),
    )
