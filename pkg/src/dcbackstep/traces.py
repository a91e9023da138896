"""Trace CSV and summary YAML files.

Floats are written with ``repr`` so a trace read back is bit-identical to
the one in memory, and two identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from .engine import TraceRecord

_SCALARS = [
    ("t", "t [s]"),
    ("V_o", "V_o [V]"),
    ("xi", "xi [A]"),
    ("Z1", "Z1 [-]"),
    ("Z2", "Z2 [A]"),
    ("c_inv", "c_inv [1/F]"),
    ("I_L_hat", "I_L_hat [A]"),
    ("phi", "phi [A/V]"),
    ("G_l", "G_l [S]"),
    ("I_l", "I_l [A]"),
    ("P_l", "P_l [W]"),
    ("V_ref", "V_ref [V]"),
    ("W", "W [mixed]"),
]
_THETA_UNITS = [("G", "S"), ("P", "W"), ("I", "A")]
_THETA_C_UNITS = [("G", "S/F"), ("P", "W/F"), ("I", "A/F")]


def _per_dgu(n):
    return [
        ("I_t", "I_t{} [A]", n),
        ("u", "u{} [-]", n),
        ("Z2i", "Z2i{} [A]", n - 1),
        ("l_inv", "l_inv{} [1/H]", n),
        ("lam", "lam{} [1/s]", n),
        ("mu", "mu{} [V/H]", n),
    ]


def header(n: int) -> list:
    cols = [c for _, c in _SCALARS]
    for _, fmt, size in _per_dgu(n):
        cols += [fmt.format(i + 1) for i in range(size)]
    cols += [f"theta_{k} [{u}]" for k, u in _THETA_UNITS]
    cols += [f"theta_c_{k} [{u}]" for k, u in _THETA_C_UNITS]
    cols.append("clamp_flag [0/1]")
    return cols


def _row(rec: TraceRecord, n: int) -> list:
    row = [repr(float(getattr(rec, a))) for a, _ in _SCALARS]
    for attr, _, size in _per_dgu(n):
        row += [repr(float(x)) for x in getattr(rec, attr)[:size]]
    row += [repr(float(x)) for x in rec.theta]
    row += [repr(float(x)) for x in rec.theta_c]
    row.append(str(int(bool(rec.clamp_flag))))
    return row


def write_trace_csv(trace, path, n: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header(n))
        for rec in trace:
            w.writerow(_row(rec, n))


def read_trace_csv(path) -> list:
    """Records from a file written by :func:`write_trace_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    n = sum(1 for c in head if c.startswith("I_t"))
    if head != header(n):
        raise ValueError(f"{path}: unrecognised trace header")
    out = []
    for row in body:
        vals = iter(row)
        kw = {a: float(next(vals)) for a, _ in _SCALARS}
        for attr, _, size in _per_dgu(n):
            kw[attr] = np.array([float(next(vals)) for _ in range(size)])
        kw["theta"] = np.array([float(next(vals)) for _ in range(3)])
        kw["theta_c"] = np.array([float(next(vals)) for _ in range(3)])
        kw["clamp_flag"] = next(vals) == "1"
        out.append(TraceRecord(**kw))
    return out


def write_summary(summary, path, extra: dict | None = None) -> None:
    doc = summary.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))
