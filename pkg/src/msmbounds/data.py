"""Immutable data containers, CSV ingestion, and fold splitting.

Static data is a table of units (x, a, y); panel data is long-format with
one row per (id, t) and the terminal outcome repeated on every row of an
id. Covariates may be absent (d = 0).
"""

import csv

import numpy as np

from .errors import (
    BadFoldCount,
    DataError,
    EmptyFile,
    MissingColumn,
    ParseError,
    RaggedPanel,
)


class Dataset:
    """Immutable static dataset: covariates x (n, d), treatment a (n,), outcome y (n,)."""

    __slots__ = ("x", "a", "y")

    def __init__(self, x, a, y):
        a = np.array(a, dtype=float, copy=True).ravel()
        y = np.array(y, dtype=float, copy=True).ravel()
        if x is None:
            x = np.zeros((a.size, 0))
        x = np.array(x, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.size == 0:
            x = x.reshape(a.size, 0)
        if x.shape[0] != a.size or a.size != y.size:
            raise DataError("x, a, y lengths differ")
        if a.size < 2:
            raise DataError("need at least 2 units")
        for name, arr in (("x", x), ("a", a), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {name}")
        x.setflags(write=False)
        a.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @property
    def n(self):
        return self.a.size

    @property
    def d(self):
        return self.x.shape[1]

    def take(self, indices):
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.x[indices], self.a[indices], self.y[indices])

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d})"


class PanelDataset:
    """Immutable panel dataset: x (n, T, d), a (n, T), terminal y (n,), ids (n,)."""

    __slots__ = ("ids", "x", "a", "y")

    def __init__(self, ids, x, a, y):
        a = np.array(a, dtype=float, copy=True)
        y = np.array(y, dtype=float, copy=True).ravel()
        ids = list(ids)
        if a.ndim != 2:
            raise DataError("a must be (n, T)")
        if x is None:
            x = np.zeros(a.shape + (0,))
        x = np.array(x, dtype=float, copy=True)
        if x.ndim == 2:  # single covariate given as (n, T)
            x = x[:, :, None]
        n, T = a.shape
        if x.shape[:2] != (n, T) or y.size != n or len(ids) != n:
            raise DataError("panel array shapes inconsistent")
        if T < 1:
            raise DataError("need T >= 1")
        if n < 2:
            raise DataError("need at least 2 units")
        for name, arr in (("x", x), ("a", a), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {name}")
        x.setflags(write=False)
        a.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):
        raise AttributeError("PanelDataset is immutable")

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def T(self):
        return self.a.shape[1]

    @property
    def d(self):
        return self.x.shape[2]

    def take(self, indices):
        indices = np.asarray(indices, dtype=int)
        return PanelDataset([self.ids[i] for i in indices],
                            self.x[indices], self.a[indices], self.y[indices])

    def to_static(self):
        """Collapse a T=1 panel to the equivalent static dataset."""
        if self.T != 1:
            raise DataError("to_static requires T = 1")
        return Dataset(self.x[:, 0, :], self.a[:, 0], self.y)

    def __repr__(self):
        return f"PanelDataset(n={self.n}, T={self.T}, d={self.d})"


class FoldAssignment:
    """Partition of unit indices {0..n-1} into k nonempty folds."""

    __slots__ = ("fold_of_unit", "k")

    def __init__(self, fold_of_unit, k):
        fold_of_unit = np.asarray(fold_of_unit, dtype=int)
        counts = np.bincount(fold_of_unit, minlength=k)
        if counts.size != k or np.any(counts == 0):
            raise BadFoldCount("every fold must be nonempty")
        fold_of_unit.setflags(write=False)
        object.__setattr__(self, "fold_of_unit", fold_of_unit)
        object.__setattr__(self, "k", int(k))

    def __setattr__(self, name, value):
        raise AttributeError("FoldAssignment is immutable")

    @property
    def n(self):
        return self.fold_of_unit.size

    def members(self, fold):
        return np.nonzero(self.fold_of_unit == fold)[0]

    def complement(self, fold):
        return np.nonzero(self.fold_of_unit != fold)[0]


def split_folds(n, k, seed):
    """Random balanced fold assignment; fold sizes differ by at most one."""
    if not 2 <= k <= n:
        raise BadFoldCount(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold = np.empty(n, dtype=int)
    # indices 0..n-1 dealt round-robin over folds in permuted order
    fold[perm] = np.arange(n) % k
    return FoldAssignment(fold, k)


def _read_rows(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    with fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(field.strip() for field in r)]
    if not rows:
        raise EmptyFile(f"no rows in {path}")
    header = [h.strip() for h in rows[0]]
    if len(rows) == 1:
        raise EmptyFile(f"header only in {path}")
    return header, rows[1:]


def _column_index(header, name):
    try:
        return header.index(name)
    except ValueError:
        raise MissingColumn(name) from None


def _parse_cell(row_values, row_number, idx, col_name):
    raw = row_values[idx].strip() if idx < len(row_values) else ""
    try:
        return float(raw)
    except ValueError:
        raise ParseError(row_number, col_name, raw) from None


def load_csv(path, schema=None):
    """Load a static dataset.

    schema: {"y": name, "a": name, "x": [names...]}; x defaults to [] when
    omitted. Rows keep file order.
    """
    schema = dict(schema or {})
    y_col = schema.get("y", "y")
    a_col = schema.get("a", "a")
    x_cols = list(schema.get("x", []))
    header, body = _read_rows(path)
    yi = _column_index(header, y_col)
    ai = _column_index(header, a_col)
    xi = [_column_index(header, c) for c in x_cols]
    n = len(body)
    y = np.empty(n)
    a = np.empty(n)
    x = np.empty((n, len(xi)))
    for r, row in enumerate(body):
        rownum = r + 2  # 1-based, counting the header
        y[r] = _parse_cell(row, rownum, yi, y_col)
        a[r] = _parse_cell(row, rownum, ai, a_col)
        for j, idx in enumerate(xi):
            x[r, j] = _parse_cell(row, rownum, idx, x_cols[j])
    return Dataset(x, a, y)


def load_panel_csv(path, schema=None):
    """Load a long-format panel: one row per (id, t), outcome repeated per id.

    schema: {"id": name, "t": name, "y": name, "a": name, "x": [names...]}.
    Every id must carry the same set of t values 1..T, and y must be
    constant within id. Output sorted by (first appearance of id, t).
    """
    schema = dict(schema or {})
    id_col = schema.get("id", "id")
    t_col = schema.get("t", "t")
    y_col = schema.get("y", "y")
    a_col = schema.get("a", "a")
    x_cols = list(schema.get("x", []))
    header, body = _read_rows(path)
    ii = _column_index(header, id_col)
    ti = _column_index(header, t_col)
    yi = _column_index(header, y_col)
    ai = _column_index(header, a_col)
    xi = [_column_index(header, c) for c in x_cols]

    by_id = {}
    order = []
    for r, row in enumerate(body):
        rownum = r + 2
        unit_id = row[ii].strip() if ii < len(row) else ""
        t_val = _parse_cell(row, rownum, ti, t_col)
        if t_val != int(t_val):
            raise ParseError(rownum, t_col, row[ti])
        t_val = int(t_val)
        y_val = _parse_cell(row, rownum, yi, y_col)
        a_val = _parse_cell(row, rownum, ai, a_col)
        x_val = [_parse_cell(row, rownum, idx, x_cols[j]) for j, idx in enumerate(xi)]
        if unit_id not in by_id:
            by_id[unit_id] = {}
            order.append(unit_id)
        if t_val in by_id[unit_id]:
            raise RaggedPanel(unit_id, f"duplicate t={t_val}")
        by_id[unit_id][t_val] = (a_val, x_val, y_val)

    t_sets = {uid: tuple(sorted(steps)) for uid, steps in by_id.items()}
    expected = t_sets[order[0]]
    if expected != tuple(range(1, len(expected) + 1)):
        raise RaggedPanel(order[0], f"t values {list(expected)} are not 1..T")
    for uid, ts in t_sets.items():
        if ts != expected:
            raise RaggedPanel(uid, f"t values {list(ts)} differ from {list(expected)}")
    T = len(expected)
    n = len(order)
    a = np.empty((n, T))
    x = np.empty((n, T, len(xi)))
    y = np.empty(n)
    for i, uid in enumerate(order):
        ys = {by_id[uid][t][2] for t in expected}
        if len(ys) != 1:
            raise RaggedPanel(uid, "outcome not constant within id")
        y[i] = ys.pop()
        for t in expected:
            a_val, x_val, _ = by_id[uid][t]
            a[i, t - 1] = a_val
            x[i, t - 1, :] = x_val
    return PanelDataset(order, x, a, y)


def save_csv(dataset, path, schema=None):
    """Write a dataset back to CSV with round-trippable float formatting."""
    schema = dict(schema or {})
    if isinstance(dataset, PanelDataset):
        id_col = schema.get("id", "id")
        t_col = schema.get("t", "t")
        y_col = schema.get("y", "y")
        a_col = schema.get("a", "a")
        x_cols = list(schema.get("x", [f"x{j + 1}" for j in range(dataset.d)]))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([id_col, t_col, a_col] + x_cols + [y_col])
            for i in range(dataset.n):
                for t in range(dataset.T):
                    row = [str(dataset.ids[i]), str(t + 1), f"{dataset.a[i, t]:.17g}"]
                    row += [f"{v:.17g}" for v in dataset.x[i, t]]
                    row.append(f"{dataset.y[i]:.17g}")
                    writer.writerow(row)
        return
    y_col = schema.get("y", "y")
    a_col = schema.get("a", "a")
    x_cols = list(schema.get("x", [f"x{j + 1}" for j in range(dataset.d)]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([a_col] + x_cols + [y_col])
        for i in range(dataset.n):
            row = [f"{dataset.a[i]:.17g}"]
            row += [f"{v:.17g}" for v in dataset.x[i]]
            row.append(f"{dataset.y[i]:.17g}")
            writer.writerow(row)
