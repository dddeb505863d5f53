"""Readers and writers for the on-disk dataset formats.

Formats:
- edge file: one edge per line, two whitespace-separated 0-based node ids,
  lines starting with ``#`` ignored
- feature file: CSV, row i = node i, all numeric, optional single header row
  (auto-detected)
- treatment/outcome file: CSV with columns ``node,treatment,outcome``

Floats are written with ``repr`` so a save/load round trip is exact.
"""
from __future__ import annotations

import os

import numpy as np

from .graph import FeatureMatrix, Network, ObservationalDataset

EDGE_FILE = "edges.txt"
FEATURE_FILE = "features.csv"
TREATMENT_OUTCOME_FILE = "treatment_outcome.csv"


class DatasetFormatError(ValueError):
    """Malformed input file; carries the path and 1-based line number."""

    def __init__(self, path, line_no: int | None, message: str) -> None:
        self.path = str(path)
        self.line_no = line_no
        where = f"{self.path}:{line_no}" if line_no is not None else self.path
        super().__init__(f"{where}: {message}")


def _fmt(x: float) -> str:
    return repr(float(x))


def load_edge_file(path) -> list[tuple[int, int]]:
    """Parse an edge list; rejects self-loops and duplicate edges."""
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetFormatError(path, line_no, f"expected two node ids, got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DatasetFormatError(path, line_no, f"non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise DatasetFormatError(path, line_no, f"negative node id in {line!r}")
            if u == v:
                raise DatasetFormatError(path, line_no, f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise DatasetFormatError(path, line_no, f"duplicate edge ({u}, {v})")
            seen.add(key)
            edges.append(key)
    return edges


def _looks_numeric(fields: list[str]) -> bool:
    try:
        for f in fields:
            float(f)
    except ValueError:
        return False
    return True


def load_feature_file(path) -> np.ndarray:
    """Parse a numeric CSV of node features, skipping one optional header row."""
    rows: list[list[float]] = []
    width: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if line_no == 1 and not _looks_numeric(fields):
                continue  # header row
            if not _looks_numeric(fields):
                raise DatasetFormatError(path, line_no, f"non-numeric feature value in {line!r}")
            vals = [float(f) for f in fields]
            if not all(np.isfinite(vals)):
                raise DatasetFormatError(path, line_no, "non-finite feature value")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetFormatError(
                    path, line_no, f"expected {width} columns, got {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise DatasetFormatError(path, None, "no feature rows")
    return np.array(rows, dtype=np.float64)


def load_treatment_outcome_file(path, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Parse the node,treatment,outcome CSV; every node must appear exactly once."""
    treatments = np.full(n_nodes, -1, dtype=np.int64)
    outcomes = np.zeros(n_nodes, dtype=np.float64)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        cols = [c.strip().lower() for c in header.strip().split(",")]
        if cols != ["node", "treatment", "outcome"]:
            raise DatasetFormatError(path, 1, f"expected header node,treatment,outcome, got {header.strip()!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 3:
                raise DatasetFormatError(path, line_no, f"expected 3 columns, got {len(fields)}")
            try:
                node = int(fields[0])
            except ValueError:
                raise DatasetFormatError(path, line_no, f"non-integer node id {fields[0]!r}") from None
            if not 0 <= node < n_nodes:
                raise DatasetFormatError(path, line_no, f"node id {node} out of range [0, {n_nodes})")
            if treatments[node] != -1:
                raise DatasetFormatError(path, line_no, f"duplicate row for node {node}")
            if fields[1] not in ("0", "1"):
                raise DatasetFormatError(path, line_no, f"treatment must be 0 or 1, got {fields[1]!r}")
            try:
                y = float(fields[2])
            except ValueError:
                raise DatasetFormatError(path, line_no, f"non-numeric outcome {fields[2]!r}") from None
            if not np.isfinite(y):
                raise DatasetFormatError(path, line_no, "non-finite outcome")
            treatments[node] = int(fields[1])
            outcomes[node] = y
    missing = np.flatnonzero(treatments == -1)
    if missing.size:
        raise DatasetFormatError(path, None, f"missing row for node {int(missing[0])}")
    return treatments, outcomes


def load_dataset(edge_file, feature_file, treatment_outcome_file=None) -> ObservationalDataset:
    """Load and validate a dataset from its component files.

    Node count is taken from the feature file and must agree with the edge
    file: when edges are present, the highest node id plus one must equal the
    feature row count, so the two files describe the same node set.
    """
    features = load_feature_file(feature_file)
    n_nodes = features.shape[0]
    edges = load_edge_file(edge_file)
    if edges:
        implied = max(max(u, v) for u, v in edges) + 1
        if implied != n_nodes:
            raise DatasetFormatError(
                edge_file, None,
                f"edge file implies {implied} nodes but feature file has {n_nodes} rows",
            )
    network = Network(n_nodes, np.array(edges, dtype=np.int64).reshape(-1, 2))
    if treatment_outcome_file is None:
        return ObservationalDataset(network, FeatureMatrix(features))
    t, y = load_treatment_outcome_file(treatment_outcome_file, n_nodes)
    return ObservationalDataset(network, FeatureMatrix(features), t, y)


def save_edge_file(network: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in network.edges:
            fh.write(f"{u} {v}\n")


def save_feature_file(features: FeatureMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in features.values:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def save_treatment_outcome_file(treatments: np.ndarray, outcomes: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node,treatment,outcome\n")
        for node, (t, y) in enumerate(zip(treatments, outcomes)):
            fh.write(f"{node},{int(t)},{_fmt(y)}\n")


def save_dataset(dataset: ObservationalDataset, out_dir) -> dict[str, str]:
    """Write the dataset's component files into ``out_dir``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "edges": os.path.join(out_dir, EDGE_FILE),
        "features": os.path.join(out_dir, FEATURE_FILE),
    }
    save_edge_file(dataset.network, paths["edges"])
    save_feature_file(dataset.features, paths["features"])
    if dataset.treatments is not None:
        paths["treatment_outcome"] = os.path.join(out_dir, TREATMENT_OUTCOME_FILE)
        save_treatment_outcome_file(dataset.treatments, dataset.outcomes, paths["treatment_outcome"])
    return paths


def load_dataset_dir(in_dir) -> ObservationalDataset:
    """Load a dataset previously written by :func:`save_dataset`."""
    to_path = os.path.join(in_dir, TREATMENT_OUTCOME_FILE)
    return load_dataset(
        os.path.join(in_dir, EDGE_FILE),
        os.path.join(in_dir, FEATURE_FILE),
        to_path if os.path.exists(to_path) else None,
    )
