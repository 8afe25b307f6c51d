"""Network container, covariate coding from node descriptors, and file readers."""
import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

QUANTITATIVE = "quantitative"
ORDINAL = "ordinal"
QUALITATIVE = "qualitative"
KINDS = (QUANTITATIVE, ORDINAL, QUALITATIVE)


class NetworkFormatError(ValueError):
    """Raised when an input file or array does not describe a valid network."""


@dataclass(frozen=True)
class Network:
    """Undirected binary network with an edge-covariate tensor.

    ``adjacency`` is n x n with a zero diagonal, ``covariates`` is n x n x d.
    Both are symmetric in their first two axes. Diagonal entries are never
    read by the fitting code.
    """

    adjacency: np.ndarray
    covariates: np.ndarray
    node_ids: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        Y = np.asarray(self.adjacency, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
            raise NetworkFormatError("adjacency must be a square matrix")
        n = Y.shape[0]
        if n < 1:
            raise NetworkFormatError("network needs at least one node")
        Y = Y.copy()
        np.fill_diagonal(Y, 0.0)
        if not np.all((Y == 0) | (Y == 1)):
            raise NetworkFormatError("adjacency must be binary")
        if not np.array_equal(Y, Y.T):
            raise NetworkFormatError("adjacency must be symmetric")
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 2 and X.size == 0:
            X = np.zeros((n, n, 0))
        if X.ndim != 3 or X.shape[:2] != (n, n):
            raise NetworkFormatError(f"covariates must have shape ({n}, {n}, d), got {X.shape}")
        X = X.copy()
        X[np.arange(n), np.arange(n), :] = 0.0
        if not np.allclose(X, X.transpose(1, 0, 2), rtol=0, atol=1e-12):
            raise NetworkFormatError("covariate tensor must be symmetric in (i, j)")
        if not np.all(np.isfinite(X)):
            raise NetworkFormatError("covariate tensor contains non-finite values")
        Y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "adjacency", Y)
        object.__setattr__(self, "covariates", X)
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(str(i) for i in range(n)))
        elif len(self.node_ids) != n:
            raise NetworkFormatError("node_ids length does not match adjacency")
        if not self.covariate_names:
            names = tuple(f"x{k + 1}" for k in range(X.shape[2]))
            object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[2]

    @property
    def density(self) -> float:
        n = self.n
        if n < 2:
            return 0.0
        return float(self.adjacency.sum() / (n * (n - 1)))

    def without_covariates(self) -> "Network":
        return Network(self.adjacency, np.zeros((self.n, self.n, 0)), self.node_ids)


def standardize_covariates(X: np.ndarray) -> np.ndarray:
    """Center and scale every covariate over the off-diagonal pairs."""
    X = np.array(X, dtype=float)
    n = X.shape[0]
    off = ~np.eye(n, dtype=bool)
    for k in range(X.shape[2]):
        vals = X[:, :, k][off]
        sd = vals.std()
        X[:, :, k][off] = (vals - vals.mean()) / (sd if sd > 0 else 1.0)
    return X


# ---------------------------------------------------------------------------
# node descriptors


@dataclass
class NodeColumn:
    name: str
    kind: str
    values: list
    levels: Optional[list] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NetworkFormatError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass
class NodeDescriptorTable:
    """Per-node descriptor columns, each quantitative, ordinal or qualitative.

    Missing values are represented by ``None``.
    """

    columns: list = field(default_factory=list)
    node_ids: Optional[list] = None

    @property
    def n(self) -> int:
        if not self.columns:
            return len(self.node_ids or [])
        return len(self.columns[0].values)


def impute_column_means(table: NodeDescriptorTable) -> NodeDescriptorTable:
    """Replace missing quantitative values by the column mean."""
    cols = []
    for col in table.columns:
        if col.kind == QUANTITATIVE and any(v is None for v in col.values):
            present = [float(v) for v in col.values if v is not None]
            if not present:
                raise NetworkFormatError(f"column {col.name!r} has no observed values")
            mean = float(np.mean(present))
            col = NodeColumn(col.name, col.kind,
                             [mean if v is None else v for v in col.values], col.levels)
        cols.append(col)
    return NodeDescriptorTable(cols, table.node_ids)


def _check_missing(col: NodeColumn):
    for i, v in enumerate(col.values):
        if v is None or (isinstance(v, float) and np.isnan(v)):
            raise NetworkFormatError(
                f"column {col.name!r}: missing value for node {i}; "
                "impute before coding (quantitative columns accept --impute-mean)")


def code_covariates(nodes: Optional[NodeDescriptorTable] = None,
                    edges: Optional[np.ndarray] = None, n: Optional[int] = None,
                    return_names: bool = False):
    """Build the n x n x d edge-covariate tensor.

    Blocks are concatenated in this order: raw edge descriptors, then
    |x_i - x_j| for quantitative node columns, then ordinal distances coded
    as L - 1 indicators (distance 0 is the baseline), then two indicators
    per level of each qualitative column ("both nodes have the level",
    "exactly one node has it").
    """
    if nodes is None and edges is None and n is None:
        raise ValueError("need a node table, an edge tensor, or n")
    if nodes is not None and nodes.columns:
        n_nodes = nodes.n
    elif edges is not None:
        n_nodes = np.asarray(edges).shape[0]
    else:
        n_nodes = n if n is not None else nodes.n
    blocks, names = [], []

    if edges is not None:
        E = np.asarray(edges, dtype=float)
        if E.ndim == 2:
            E = E[:, :, None]
        if E.shape[:2] != (n_nodes, n_nodes):
            raise NetworkFormatError("edge descriptor tensor does not match node count")
        if not np.allclose(E, E.transpose(1, 0, 2), rtol=0, atol=1e-12):
            raise NetworkFormatError("edge descriptors must be symmetric")
        blocks.append(E)
        names += [f"edge{k + 1}" for k in range(E.shape[2])]

    columns = nodes.columns if nodes is not None else []
    for kind in (QUANTITATIVE, ORDINAL, QUALITATIVE):
        for col in columns:
            if col.kind != kind:
                continue
            _check_missing(col)
            if len(col.values) != n_nodes:
                raise NetworkFormatError(f"column {col.name!r} has {len(col.values)} rows, expected {n_nodes}")
            if kind == QUANTITATIVE:
                x = np.asarray(col.values, dtype=float)
                blocks.append(np.abs(x[:, None] - x[None, :])[:, :, None])
                names.append(col.name)
            elif kind == ORDINAL:
                x = np.asarray(col.values, dtype=float)
                L = int(col.levels) if col.levels is not None else int(x.max())
                if np.any(x != np.round(x)) or np.any(x < 1) or np.any(x > L):
                    raise NetworkFormatError(f"column {col.name!r}: ordinal values must lie in 1..{L}")
                dist = np.abs(x[:, None] - x[None, :]).astype(int)
                block = np.stack([(dist == lev) for lev in range(1, L)], axis=2) \
                    if L > 1 else np.zeros((n_nodes, n_nodes, 0))
                blocks.append(block.astype(float))
                names += [f"{col.name}=|{lev}|" for lev in range(1, L)]
            else:
                levels = list(col.levels) if col.levels else sorted({str(v) for v in col.values})
                vals = [str(v) for v in col.values]
                bad = sorted(set(vals) - set(levels))
                if bad:
                    raise NetworkFormatError(f"column {col.name!r}: values {bad} not in declared levels")
                for lev in levels:
                    has = np.array([v == lev for v in vals], dtype=float)
                    blocks.append(np.outer(has, has)[:, :, None])
                    xor = np.abs(has[:, None] - has[None, :])
                    blocks.append(xor[:, :, None])
                    names += [f"{col.name}:both={lev}", f"{col.name}:one={lev}"]

    if blocks:
        X = np.concatenate(blocks, axis=2)
    else:
        X = np.zeros((n_nodes, n_nodes, 0))
    X[np.arange(n_nodes), np.arange(n_nodes), :] = 0.0
    if return_names:
        return X, names
    return X


# ---------------------------------------------------------------------------
# readers


def _parse_header_field(text: str, path, lineno):
    parts = text.strip().split(":")
    name = parts[0].strip()
    kind = parts[1].strip().lower() if len(parts) > 1 else QUANTITATIVE
    if kind not in KINDS:
        raise NetworkFormatError(f"{path}:{lineno}: unknown column kind {kind!r} for {name!r}")
    levels = None
    if len(parts) > 2 and parts[2].strip():
        if kind == ORDINAL:
            try:
                levels = int(parts[2])
            except ValueError:
                raise NetworkFormatError(f"{path}:{lineno}: ordinal levels must be an integer") from None
        else:
            levels = [lv.strip() for lv in parts[2].split("|")]
    return name, kind, levels


def read_node_table(path) -> NodeDescriptorTable:
    """Read a node CSV whose first column holds node ids.

    Header fields are ``name:kind[:levels]``; qualitative levels are
    ``|``-separated, ordinal levels are the integer L. Empty cells and
    ``NA`` mark missing values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise NetworkFormatError(f"{path}:1: empty node table")
    header = rows[0]
    specs = [_parse_header_field(h, path, 1) for h in header[1:]]
    ids, cols = [], [[] for _ in specs]
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise NetworkFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0].strip())
        for c, ((name, kind, _), cell) in enumerate(zip(specs, row[1:])):
            cell = cell.strip()
            if cell == "" or cell.upper() == "NA":
                cols[c].append(None)
            elif kind == QUALITATIVE:
                cols[c].append(cell)
            else:
                try:
                    cols[c].append(float(cell))
                except ValueError:
                    raise NetworkFormatError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {name!r}") from None
    columns = [NodeColumn(name, kind, vals, levels) for (name, kind, levels), vals in zip(specs, cols)]
    return NodeDescriptorTable(columns, ids)


class _IdMap(dict):
    def index(self, key):
        if key not in self:
            self[key] = len(self)
        return self[key]


def _read_edge_list(path, ids: _IdMap):
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) == 1:
                ids.index(tok[0])
                continue
            if len(tok) != 2:
                raise NetworkFormatError(f"{path}:{lineno}: expected 'i j', got {line!r}")
            i, j = ids.index(tok[0]), ids.index(tok[1])
            if i == j:
                warnings.warn(f"{path}:{lineno}: self-loop on node {tok[0]!r} dropped", stacklevel=3)
                continue
            edges.append((i, j))
    return edges


def _read_edge_covariates(path, ids: _IdMap):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise NetworkFormatError(f"{path}:1: empty covariate file")
    names = [h.strip() for h in rows[0][2:]]
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(names) + 2:
            raise NetworkFormatError(f"{path}:{lineno}: expected {len(names) + 2} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row[2:]]
        except ValueError:
            raise NetworkFormatError(f"{path}:{lineno}: non-numeric covariate value") from None
        if any(np.isnan(v) for v in vals):
            raise NetworkFormatError(f"{path}:{lineno}: missing covariate value")
        records.append((lineno, row[0].strip(), row[1].strip(), vals))
    return names, records


def read_network(edge_list_path, covariate_path=None, node_table_path=None,
                 n_nodes: Optional[int] = None, standardize: bool = False,
                 impute_mean: bool = False) -> Network:
    """Load a network from an edge list plus optional covariates.

    Node ids map to dense indices in first-appearance order: node-table rows
    first, then the edge list, then the covariate file. ``n_nodes`` pads the
    network with isolated nodes.
    """
    ids = _IdMap()
    table = None
    if node_table_path is not None:
        table = read_node_table(node_table_path)
        for nid in table.node_ids:
            if nid in ids:
                raise NetworkFormatError(f"{node_table_path}: duplicate node id {nid!r}")
            ids.index(nid)
    edges = _read_edge_list(edge_list_path, ids)
    cov_names, cov_records = [], []
    if covariate_path is not None:
        cov_names, cov_records = _read_edge_covariates(covariate_path, ids)
        for _, a, b, _ in cov_records:
            ids.index(a)
            ids.index(b)
    if n_nodes is not None:
        if n_nodes < len(ids):
            raise NetworkFormatError(f"declared {n_nodes} nodes but {len(ids)} ids appear in the inputs")
        k = 0
        while len(ids) < n_nodes:
            ids.index(f"_isolated{k}")
            k += 1
    n = len(ids)
    if n == 0:
        raise NetworkFormatError(f"{edge_list_path}: no nodes")
    if table is not None and len(table.node_ids) != n:
        raise NetworkFormatError(f"{node_table_path}: node table lists {len(table.node_ids)} nodes "
                                 f"but the inputs reference {n}")

    Y = np.zeros((n, n))
    for i, j in edges:
        Y[i, j] = Y[j, i] = 1.0

    edge_tensor = None
    if covariate_path is not None:
        d_edge = len(cov_names)
        edge_tensor = np.zeros((n, n, d_edge))
        seen = np.zeros((n, n), dtype=bool)
        for lineno, a, b, vals in cov_records:
            i, j = ids[a], ids[b]
            if i == j:
                continue
            v = np.asarray(vals)
            if seen[i, j] and not np.allclose(edge_tensor[i, j], v, rtol=0, atol=1e-12):
                raise NetworkFormatError(
                    f"{covariate_path}:{lineno}: asymmetric covariates for pair ({a}, {b})")
            edge_tensor[i, j] = edge_tensor[j, i] = v
            seen[i, j] = seen[j, i] = True
        off = ~np.eye(n, dtype=bool)
        if d_edge and not seen[off].all():
            i, j = np.argwhere(~seen & off)[0]
            raise NetworkFormatError(
                f"{covariate_path}: no covariate row for pair ({list(ids)[i]}, {list(ids)[j]})")

    if table is not None and impute_mean:
        table = impute_column_means(table)
    if table is not None or edge_tensor is not None:
        X, names = code_covariates(table, edge_tensor, n=n, return_names=True)
        if edge_tensor is not None:
            names[:len(cov_names)] = cov_names
    else:
        X, names = np.zeros((n, n, 0)), []
    if standardize and X.shape[2]:
        X = standardize_covariates(X)
    logger.info("read network: n=%d, edges=%d, d=%d", n, int(Y.sum() / 2), X.shape[2])
    return Network(Y, X, tuple(ids), tuple(names))


def write_edge_list(network: Network, path):
    """Write every node id on its own line, then ``i j`` lines for i < j.

    Declaring the ids first keeps the node order stable on re-reading.
    """
    Y = network.adjacency
    ids = network.node_ids
    with open(path, "w", encoding="utf-8") as fh:
        for nid in ids:
            fh.write(f"{nid}\n")
        for i, j in zip(*np.nonzero(np.triu(Y, 1))):
            fh.write(f"{ids[i]} {ids[j]}\n")


def write_edge_covariates(network: Network, path):
    X = network.covariates
    ids = network.node_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", *network.covariate_names])
        for i in range(network.n):
            for j in range(i + 1, network.n):
                w.writerow([ids[i], ids[j], *(repr(float(v)) for v in X[i, j])])


def adjacency_from_edges(n: int, edges: Sequence) -> np.ndarray:
    Y = np.zeros((n, n))
    for i, j in edges:
        if i != j:
            Y[i, j] = Y[j, i] = 1.0
    return Y
