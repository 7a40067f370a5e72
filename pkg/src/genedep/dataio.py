"""Readers and writers for expression matrices, networks, position tables
and JSON-lines result documents.

All on-disk formats are described byte-for-byte in ``FORMATS.md``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class ParseError(ValueError):
    """Malformed input file."""


class ValidationError(ValueError):
    """Well-formed input that violates a data invariant."""


def _check_unique(ids, axis):
    seen = set()
    for i in ids:
        if i in seen:
            raise ValidationError(f"duplicate {axis} id {i!r}")
        seen.add(i)


@dataclass
class ExpressionMatrix:
    """Features x samples real matrix with row and column identifiers."""

    values: np.ndarray
    feature_ids: list
    sample_ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.feature_ids = [str(f) for f in self.feature_ids]
        self.sample_ids = [str(s) for s in self.sample_ids]
        if self.values.ndim != 2:
            raise ValidationError("values must be a 2-d matrix")
        if self.values.shape != (len(self.feature_ids), len(self.sample_ids)):
            raise ValidationError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.feature_ids)} feature ids x {len(self.sample_ids)} sample ids"
            )
        _check_unique(self.feature_ids, "feature")
        _check_unique(self.sample_ids, "sample")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("matrix contains non-finite values")

    @property
    def shape(self):
        return self.values.shape

    def feature_index(self, ids) -> np.ndarray:
        lookup = {f: i for i, f in enumerate(self.feature_ids)}
        try:
            return np.array([lookup[i] for i in ids], dtype=int)
        except KeyError as exc:
            raise KeyError(f"unknown feature id {exc.args[0]!r}") from None

    def subset(self, feature_ids) -> "ExpressionMatrix":
        idx = self.feature_index(feature_ids)
        return ExpressionMatrix(self.values[idx], list(feature_ids), list(self.sample_ids))


@dataclass
class InteractionNetwork:
    """Undirected simple graph over string node ids.

    ``skipped_self_loops`` counts self-loop lines dropped by the reader.
    """

    nodes: list
    edges: set
    skipped_self_loops: int = 0

    def __post_init__(self):
        self.nodes = [str(n) for n in self.nodes]
        _check_unique(self.nodes, "node")
        node_set = set(self.nodes)
        clean = set()
        for e in self.edges:
            a, b = tuple(e)
            if a == b:
                raise ValidationError(f"self-loop on {a!r}")
            if a not in node_set or b not in node_set:
                raise ValidationError(f"edge {a!r}-{b!r} has an endpoint outside the node set")
            clean.add(frozenset((a, b)))
        self.edges = clean

    def adjacency(self) -> dict:
        adj = {n: set() for n in self.nodes}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def is_connected_subset(self, genes) -> bool:
        genes = set(genes)
        if not genes:
            return False
        adj = self.adjacency()
        start = next(iter(genes))
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v in genes and v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen == genes


@dataclass
class PositionTable:
    """Genomic position ``(chromosome, coordinate)`` of each feature."""

    positions: dict = field(default_factory=dict)

    def __post_init__(self):
        for fid, (chrom, coord) in self.positions.items():
            if int(coord) != coord or coord < 0:
                raise ValidationError(f"coordinate of {fid!r} must be a non-negative integer")
        self.positions = {str(k): (str(c), int(x)) for k, (c, x) in self.positions.items()}

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, fid):
        return self.positions[fid]

    def chromosomes(self) -> dict:
        """Map chromosome -> feature ids sorted by coordinate (then id)."""
        out: dict = {}
        for fid, (chrom, coord) in self.positions.items():
            out.setdefault(chrom, []).append((coord, fid))
        return {c: [f for _, f in sorted(v)] for c, v in sorted(out.items())}


# ---------------------------------------------------------------------------
# TSV readers/writers

def _split_lines(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    return [(n + 1, ln.rstrip("\r")) for n, ln in enumerate(text.split("\n"))]


def _parse_float(cell, lineno, path):
    # float() accepts "nan", "inf" and surrounding whitespace; reject all three
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
    if not math.isfinite(v) or cell != cell.strip():
        raise ParseError(f"{path}:{lineno}: invalid numeric cell {cell!r}")
    return v


def read_matrix(path) -> ExpressionMatrix:
    """Read a feature x sample matrix from a tab-separated file.

    The first line holds a corner label followed by sample ids; every
    other non-empty line holds a feature id followed by one decimal
    number per sample.
    """
    lines = [(n, ln) for n, ln in _split_lines(path) if ln != ""]
    if not lines:
        raise ParseError(f"{path}: empty file")
    _, header = lines[0]
    sample_ids = header.split("\t")[1:]
    if not sample_ids:
        raise ParseError(f"{path}:1: header has no sample columns")
    rows, ids = [], []
    for lineno, ln in lines[1:]:
        cells = ln.split("\t")
        if len(cells) != len(sample_ids) + 1:
            raise ParseError(
                f"{path}:{lineno}: expected {len(sample_ids) + 1} fields, got {len(cells)}"
            )
        ids.append(cells[0])
        rows.append([_parse_float(c, lineno, path) for c in cells[1:]])
    if not rows:
        raise ParseError(f"{path}: no feature rows")
    return ExpressionMatrix(np.array(rows, dtype=float), ids, sample_ids)


def write_matrix(m: ExpressionMatrix, path, corner: str = "id") -> None:
    """Write ``m`` in the matrix TSV format; values use ``repr`` so they
    read back bit-identically."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join([corner] + list(m.sample_ids)) + "\n")
        for fid, row in zip(m.feature_ids, m.values):
            fh.write("\t".join([fid] + [repr(float(v)) for v in row]) + "\n")


def read_edge_list(path) -> InteractionNetwork:
    """Read an undirected edge list (two tab-separated node ids per line).

    Duplicate and reversed edges collapse to one; self-loops are skipped
    and counted in ``skipped_self_loops``.
    """
    edges = set()
    nodes: dict = {}
    loops = 0
    for lineno, ln in _split_lines(path):
        if ln.strip() == "":
            continue
        cells = ln.split("\t")
        if len(cells) != 2 or not cells[0] or not cells[1]:
            raise ParseError(f"{path}:{lineno}: expected two tab-separated node ids")
        a, b = cells
        nodes.setdefault(a, None)
        nodes.setdefault(b, None)
        if a == b:
            loops += 1
            continue
        edges.add(frozenset((a, b)))
    return InteractionNetwork(list(nodes), edges, skipped_self_loops=loops)


def write_edge_list(net: InteractionNetwork, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in sorted(tuple(sorted(e)) for e in net.edges):
            fh.write(f"{a}\t{b}\n")


def read_positions(path) -> PositionTable:
    """Read ``feature_id<TAB>chromosome<TAB>coordinate`` lines."""
    pos = {}
    for lineno, ln in _split_lines(path):
        if ln.strip() == "":
            continue
        cells = ln.split("\t")
        if len(cells) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(cells)}")
        fid, chrom, coord = cells
        try:
            c = int(coord)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-integer coordinate {coord!r}") from None
        if fid in pos:
            raise ValidationError(f"duplicate feature id {fid!r} in position table")
        pos[fid] = (chrom, c)
    return PositionTable(pos)


def write_positions(table: PositionTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fid, (chrom, coord) in table.positions.items():
            fh.write(f"{fid}\t{chrom}\t{coord}\n")


def read_probesets(path) -> dict:
    """Read ``probe_id<TAB>probeset_id`` lines into probeset -> probe list,
    preserving first-seen order."""
    out: dict = {}
    seen = set()
    for lineno, ln in _split_lines(path):
        if ln.strip() == "":
            continue
        cells = ln.split("\t")
        if len(cells) != 2:
            raise ParseError(f"{path}:{lineno}: expected probe_id and probeset_id")
        probe, pset = cells
        if probe in seen:
            raise ValidationError(f"probe {probe!r} listed twice")
        seen.add(probe)
        out.setdefault(pset, []).append(probe)
    return out


# ---------------------------------------------------------------------------
# JSON-lines result documents

_RECORD_TYPES: dict = {}


def register_record(name):
    """Class decorator registering a result type for :func:`read_results`.

    The class must implement ``to_record() -> dict`` and a
    ``from_record(dict)`` classmethod.
    """
    def deco(cls):
        _RECORD_TYPES[name] = cls
        cls.record_type = name
        return cls
    return deco


def encode_float(x):
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def decode_float(x):
    return float(x)


def _load_registry():
    # record classes register themselves on import
    from . import assoclust, netresponse, rpa, simcca  # noqa: F401


def write_results(records: Iterable, path) -> None:
    """Write result records as JSON lines, one object per record.

    Plain dicts are written as-is; registered result objects are tagged
    with their ``type`` so :func:`read_results` can rebuild them.
    """
    lines = []
    for rec in records:
        if isinstance(rec, dict):
            obj = dict(rec)
        else:
            obj = {"type": rec.record_type, **rec.to_record()}
        lines.append(json.dumps(obj, allow_nan=False, sort_keys=False))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for ln in lines:
                fh.write(ln + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {os.fspath(path)!r}: {exc.strerror}") from exc


def read_results(path) -> list:
    """Inverse of :func:`write_results`."""
    _load_registry()
    out = []
    for lineno, ln in _split_lines(path):
        if ln.strip() == "":
            continue
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc.msg}") from None
        cls = _RECORD_TYPES.get(obj.get("type"))
        if cls is None:
            out.append(obj)
        else:
            body = {k: v for k, v in obj.items() if k != "type"}
            out.append(cls.from_record(body))
    return out


def records_equal(a, b) -> bool:
    """Structural equality for result records holding numpy arrays."""
    if dataclasses.is_dataclass(a) and dataclasses.is_dataclass(b):
        if type(a) is not type(b):
            return False
        return all(
            records_equal(getattr(a, f.name), getattr(b, f.name)) for f in dataclasses.fields(a)
        )
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=a.dtype.kind == "f"))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(records_equal(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(records_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b
