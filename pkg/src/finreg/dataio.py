"""CSV ingestion, predictor standardization and fit-file serialization."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design import CUMULATIVE, INTERVAL, SURVIVAL, ModelData, build_cumulative, \
    build_interval_regression, build_survival
from .errors import DataError

SCHEMA_VERSION = 1
LOWER, UPPER, CATEGORY = "lower", "upper", "category"


@dataclass
class Dataset:
    lower: np.ndarray | None
    upper: np.ndarray | None
    predictors: np.ndarray
    column_names: list
    category: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.predictors.shape[0]


def _endpoint(token: str, missing: float, row: int, col: str) -> float:
    t = token.strip()
    if t == "":
        return missing
    try:
        return float(t)
    except ValueError:
        raise DataError(f"malformed number {token!r}", row=row, column=col) from None


def _number(token: str, row: int, col: str) -> float:
    try:
        x = float(token.strip())
    except ValueError:
        raise DataError(f"malformed number {token!r}", row=row, column=col) from None
    if not math.isfinite(x):
        raise DataError("predictor values must be finite", row=row, column=col)
    return x


def parse_dataset(path, predictors=None, require_response: bool = True) -> Dataset:
    """Read a CSV with ``lower``/``upper`` (or ``category``) and numeric predictors.

    Empty ``lower`` cells mean ``-inf`` and empty ``upper`` cells ``+inf``;
    ``inf``/``-inf`` tokens are accepted in any case.  Row numbers in errors
    count data rows from 1.  ``predictors`` selects and orders predictor
    columns; by default every other column is used.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file: a header row is required") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    has_cat = CATEGORY in header
    has_int = LOWER in header and UPPER in header
    if require_response and not (has_cat or has_int):
        raise DataError("need 'lower' and 'upper' columns or a 'category' column")
    reserved = {LOWER, UPPER, CATEGORY}
    names = [h for h in header if h not in reserved] if predictors is None else list(predictors)
    missing_cols = [c for c in names if c not in header]
    if missing_cols:
        raise DataError(f"missing predictor columns: {missing_cols}")
    pos = {h: i for i, h in enumerate(header)}

    n = len(rows)
    X = np.empty((n, len(names)))
    lower = np.empty(n) if has_int else None
    upper = np.empty(n) if has_int else None
    cat = np.empty(n, dtype=int) if has_cat else None
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(r)}", row=i)
        for j, c in enumerate(names):
            X[i - 1, j] = _number(r[pos[c]], i, c)
        if has_int:
            lo = _endpoint(r[pos[LOWER]], -math.inf, i, LOWER)
            hi = _endpoint(r[pos[UPPER]], math.inf, i, UPPER)
            if math.isnan(lo) or math.isnan(hi):
                raise DataError("interval endpoints cannot be NaN", row=i)
            if not lo < hi:
                raise DataError(f"lower endpoint {lo} is not below upper endpoint {hi}", row=i)
            lower[i - 1], upper[i - 1] = lo, hi
        if has_cat:
            v = _number(r[pos[CATEGORY]], i, CATEGORY)
            if v != int(v) or v < 1:
                raise DataError("categories must be positive integers", row=i, column=CATEGORY)
            cat[i - 1] = int(v)
    if n == 0:
        raise DataError("no data rows")
    return Dataset(lower, upper, X, names, cat)


@dataclass
class Standardizer:
    """Column centering/scaling that leaves constant columns untouched."""

    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def fit(cls, X, center=True) -> "Standardizer":
        X = np.asarray(X, float)
        sd = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
        const = ~(sd > 0)
        means = np.where(const | (not center), 0.0, X.mean(axis=0))
        return cls(means, np.where(const, 1.0, sd))

    def transform(self, X):
        return (np.asarray(X, float) - self.means) / self.scales

    def unstandardize(self, theta, x_offset: int, shift_coord=None, shift_sign=-1.0):
        """Map coefficients fitted on standardized predictors back to the raw scale.

        Predictors enter the endpoints as ``-x'beta``.  The centering shift is
        absorbed by ``shift_coord``: an intercept (``shift_sign=-1``) or every
        cutpoint of a cumulative model (``shift_sign=+1``).
        """
        theta = np.array(theta, dtype=float)
        beta_std = theta[x_offset:].copy()
        theta[x_offset:] = beta_std / self.scales
        shift = float(np.sum(beta_std * self.means / self.scales))
        if shift_coord is not None:
            theta[shift_coord] += shift_sign * shift
        return theta


def design_matrix(ds: Dataset, intercept: bool):
    X = ds.predictors
    names = list(ds.column_names)
    if intercept:
        X = np.c_[np.ones(ds.n), X]
        names = ["intercept"] + names
    return X, names


def build_model(ds: Dataset, kind: str, family: str, scale: str = "known_one",
                basis: str = "exponential", intercept: bool = True, X=None) -> ModelData:
    """Model of the given kind from a parsed dataset (``X`` overrides the predictors)."""
    Xd, names = design_matrix(ds, intercept and kind != CUMULATIVE)
    if X is not None:
        Xd = X
    if kind == INTERVAL:
        if ds.lower is None:
            raise DataError("interval model needs 'lower' and 'upper' columns")
        return build_interval_regression(Xd, ds.lower, ds.upper, scale=scale, family=family, names=names)
    if kind == CUMULATIVE:
        if ds.category is None:
            raise DataError("cumulative model needs a 'category' column")
        return build_cumulative(ds.category, Xd if Xd.shape[1] else None, family=family, names=names)
    if kind == SURVIVAL:
        if ds.lower is None:
            raise DataError("survival model needs 'lower' and 'upper' columns")
        return build_survival(ds.lower, ds.upper, Xd, basis=basis, names=names)
    raise ValueError(f"unknown model kind {kind!r}")


def template_model(spec: dict) -> ModelData:
    """Minimal model carrying the structure recorded in a fit file."""
    kind, p = spec["kind"], len(spec["design_columns"])
    if kind == INTERVAL:
        return build_interval_regression(np.zeros((1, p)), [0.0], [1.0], scale=spec["scale"],
                                         family=spec["family"])
    if kind == CUMULATIVE:
        m = spec["n_categories"]
        return build_cumulative(np.arange(1, m + 1), np.zeros((m, p)) if p else None,
                                n_categories=m, family=spec["family"])
    if kind == SURVIVAL:
        return build_survival([0.0], [1.0], np.zeros((1, p)), basis=spec["basis"])
    raise DataError(f"unknown model kind {kind!r} in fit file")


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(_clean({"schema_version": SCHEMA_VERSION, **obj}), indent=2))


def read_fit_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"fit file is not valid JSON: {exc}") from None
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported fit-file schema version {doc.get('schema_version')!r}")
    for key in ("model", "fit"):
        if key not in doc:
            raise DataError(f"fit file lacks the {key!r} section")
    return doc
