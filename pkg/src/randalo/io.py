"""Dataset readers/writers (dense CSV, svmlight) and the result-table writer."""

from __future__ import annotations

import csv
import json
import math
import os
from datetime import datetime, timezone

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .errors import InconsistentDimension, InvalidSpec, ParseError

FORMATS = ("dense_csv", "svmlight_sparse")
_EXT = {".csv": "dense_csv", ".svm": "svmlight_sparse", ".svmlight": "svmlight_sparse", ".libsvm": "svmlight_sparse"}


def infer_format(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _EXT:
        raise InvalidSpec(f"cannot infer data format from extension {ext!r}; pass one of {FORMATS}")
    return _EXT[ext]


def _float(tok, line, what):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(line, f"{what} {tok!r} is not a number") from None


def read_dense_csv(path):
    """Rows of numbers; the last column is the response. A non-numeric first line is a header."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if lineno == 1 and not rows:
                try:
                    [float(c) for c in rec]
                except ValueError:
                    continue  # header
            vals = [_float(c.strip(), lineno, "field") for c in rec]
            if width is None:
                width = len(vals)
                if width < 2:
                    raise ParseError(lineno, "need at least one feature column and a response")
            elif len(vals) != width:
                raise InconsistentDimension(f"line {lineno} has {len(vals)} fields, expected {width}")
            rows.append(vals)
    if not rows:
        raise ParseError(0, "no data rows")
    arr = np.array(rows, dtype=float)
    return Dataset(arr[:, :-1], arr[:, -1], {"source": str(path), "format": "dense_csv"})


def read_svmlight(path, n_features=None):
    """``label idx:val ...`` per line with 1-based, strictly increasing indices."""
    labels, indptr, indices, data = [], [0], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            labels.append(_float(toks[0], lineno, "label"))
            last = 0
            for tok in toks[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(lineno, f"expected idx:val, got {tok!r}")
                try:
                    j = int(idx)
                except ValueError:
                    raise ParseError(lineno, f"index {idx!r} is not an integer") from None
                if j < 1:
                    raise ParseError(lineno, f"index {j} is not 1-based")
                if j <= last:
                    raise ParseError(lineno, f"index {j} does not increase")
                last = j
                indices.append(j - 1)
                data.append(_float(val, lineno, "value"))
            indptr.append(len(indices))
    if not labels:
        raise ParseError(0, "no data rows")
    width = (max(indices) + 1) if indices else 0
    if n_features is not None:
        if width > n_features:
            raise InconsistentDimension(f"feature index {width} exceeds declared dimension {n_features}")
        width = n_features
    X = sp.csr_matrix(
        (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(labels), width),
    )
    return Dataset(X, np.array(labels), {"source": str(path), "format": "svmlight_sparse"})


def ingest(path, format=None, n_features=None):
    fmt = format or infer_format(path)
    if fmt == "dense_csv":
        data = read_dense_csv(path)
        if n_features is not None and data.p != n_features:
            raise InconsistentDimension(f"file has {data.p} features, expected {n_features}")
        return data
    if fmt == "svmlight_sparse":
        return read_svmlight(path, n_features)
    raise InvalidSpec(f"unknown data format {fmt!r}; expected one of {FORMATS}")


def write_dense_csv(data, path):
    X = data.X.toarray() if sp.issparse(data.X) else np.asarray(data.X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row, yi in zip(X, data.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])


def write_svmlight(data, path):
    X = sp.csr_matrix(data.X)
    X.sort_indices()
    with open(path, "w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            items = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            fh.write(f"{float(data.y[i])!r} {items}".rstrip() + "\n")


def write_dataset(data, path, format=None):
    fmt = format or infer_format(path)
    if fmt == "dense_csv":
        return write_dense_csv(data, path)
    if fmt == "svmlight_sparse":
        return write_svmlight(data, path)
    raise InvalidSpec(f"unknown data format {fmt!r}")


# result tables ----------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v


def format_rows(rows, fmt="csv", timing=False, header=None):
    """Lines of a result table. Data lines are deterministic; metadata lines start with '#'."""
    if fmt not in ("csv", "jsonl"):
        raise InvalidSpec(f"unknown output format {fmt!r}; expected csv or jsonl")
    lines = []
    meta = {"created": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    meta.update(header or {})
    for k, v in meta.items():
        lines.append(f"# {k}: {v}")
    records = [r.record(timing) for r in rows]
    fields = list(rows[0].record(timing)) if rows else []
    if fmt == "csv":
        if fields:
            lines.append(",".join(fields))
        for rec in records:
            lines.append(",".join(_csv_escape(_cell(rec[f])) for f in fields))
    else:
        for rec in records:
            lines.append(json.dumps({k: _json_value(v) for k, v in rec.items()}))
    if not timing:
        for r in rows:
            lines.append(
                f"# time {r.seed} {r.method} {r.parameter} wall_time={_cell(r.wall_time)} "
                f"relative_time={_cell(r.relative_time)}"
            )
    return lines


def _csv_escape(s):
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def write_rows(rows, path, fmt="csv", timing=False, header=None):
    lines = format_rows(rows, fmt, timing, header)
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        import sys

        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def data_lines(text):
    """The non-metadata lines of a written table."""
    return [ln for ln in text.splitlines() if not ln.startswith("#")]
