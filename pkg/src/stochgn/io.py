"""LIBSVM and returns-file ingestion, and CSV trace serialization."""

from __future__ import annotations

import csv
import math
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .algorithms import RunTrace, TraceRecord
from .errors import DataError, InvalidParameter
from .problems import ClassificationDataset, ReturnsDataset

TRACE_HEADER = ("iter", "epochs", "oracle_f", "oracle_j", "psi", "rel_residual",
                "gnorm_sq", "subsolver_iters", "wall_ms")


def parse_libsvm(lines: Iterable[str]) -> ClassificationDataset:
    """Parse ``<label> <idx>:<val> ...`` lines.

    Indices are 1-based and strictly ascending; labels must be -1, 0 or +1
    with 0 mapped to -1; text after ``#`` is ignored; ``p`` is the largest
    index seen.
    """
    labels, indptr, cols, vals = [], [0], [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise DataError(f"non-numeric label {tokens[0]!r}", lineno) from None
        if label not in (-1.0, 0.0, 1.0):
            raise DataError(f"label {tokens[0]!r} not in {{-1, 0, +1}}", lineno)
        labels.append(1.0 if label == 1.0 else -1.0)
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DataError(f"malformed feature {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise DataError(f"non-numeric feature {tok!r}", lineno) from None
            if idx <= last:
                raise DataError(f"feature index {idx} not strictly ascending", lineno)
            last = idx
            cols.append(idx - 1)
            vals.append(val)
        indptr.append(len(cols))
    p = max(cols) + 1 if cols else 0
    A = sp.csr_matrix((np.array(vals, dtype=float), np.array(cols, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)), shape=(len(labels), p))
    return ClassificationDataset(A, np.array(labels, dtype=float))


def load_libsvm(path) -> ClassificationDataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh)


def write_libsvm(data: ClassificationDataset, path) -> None:
    A = data.A.tocsr()
    A.sort_indices()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(data.n):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]) if v != 0)
            label = "+1" if data.y[i] > 0 else "-1"
            fh.write(f"{label} {feats}\n" if feats else f"{label}\n")


def load_returns(path) -> ReturnsDataset:
    """Comma-separated scenario rows (one asset per column); ``c`` is the
    column mean."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                row = [float(t) for t in line.split(",")]
            except ValueError:
                raise DataError("non-numeric return", lineno) from None
            if rows and len(row) != len(rows[0]):
                raise DataError(f"expected {len(rows[0])} columns, got {len(row)}", lineno)
            if not all(math.isfinite(v) for v in row):
                raise DataError("non-finite return", lineno)
            rows.append(row)
    if not rows:
        raise DataError("returns file is empty")
    xi = np.array(rows)
    return ReturnsDataset(xi, xi.mean(axis=0))


def write_returns(data: ReturnsDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in data.xi:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


def write_trace_csv(trace: RunTrace, path, psi_star: float | None = None) -> None:
    """One row per record with 17 significant digits; empty fields for
    missing values (no ``psi_star``, final ``gnorm_sq``, untimed runs)."""
    if not trace.records:
        raise InvalidParameter("trace is empty")
    if psi_star is not None and psi_star == 0:
        raise InvalidParameter("psi_star must be nonzero for relative residuals")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.records:
            rel = math.nan if psi_star is None else (r.psi - psi_star) / abs(psi_star)
            w.writerow([_fmt(r.iter), _fmt(r.epochs), _fmt(r.oracle_f), _fmt(r.oracle_j),
                        _fmt(r.psi), _fmt(rel), _fmt(r.gnorm_sq), _fmt(r.subsolver_iters),
                        _fmt(r.wall_ms)])


def read_trace_csv(path) -> list[dict]:
    """Inverse of :func:`write_trace_csv`; empty fields become NaN."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_HEADER:
            raise DataError("unexpected trace header", 1)
        for row in reader:
            rec = {}
            for k, v in row.items():
                if k in ("iter", "oracle_f", "oracle_j", "subsolver_iters"):
                    rec[k] = int(v)
                else:
                    rec[k] = float(v) if v != "" else math.nan
            out.append(rec)
    return out


def trace_records_from_rows(rows: list[dict]) -> list[TraceRecord]:
    return [TraceRecord(r["iter"], r["epochs"], r["oracle_f"], r["oracle_j"], r["psi"],
                        r["gnorm_sq"], r["subsolver_iters"], r["wall_ms"]) for r in rows]
