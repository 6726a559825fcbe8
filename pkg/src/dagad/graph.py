"""Attributed graphs, on-disk bundles, stratified splits and anomaly injection.

Bundle directory layout::

    meta.json     {"name": str, "num_nodes": int, "num_attrs": int, ...}
    edges.tsv     "i<TAB>j" per line, 0-based, i < j
    features.bin  u64 rows, u64 cols (little endian), then rows*cols f32 LE row-major
    labels.tsv    "node_id<TAB>label", label in {0, 1}
    splits.json   {"seed": int, "train_ids": [...], "test_ids": [...]}  (optional)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import BundleError
from .fsutil import atomic_write

_FEATURE_HEADER = struct.Struct("<QQ")


@dataclass(frozen=True)
class AttributedGraph:
    num_nodes: int
    edges: np.ndarray  # (|E|, 2) int64, canonical i < j, sorted
    attributes: np.ndarray  # (n, k) float32
    neighbor_index: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.num_nodes)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        attrs = np.array(self.attributes, dtype=np.float32)
        if attrs.ndim != 2 or attrs.shape[0] != n:
            raise BundleError(f"attribute matrix has shape {attrs.shape}, expected ({n}, k)")
        if len(edges):
            bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))
            if len(bad):
                i, j = edges[bad[0]]
                raise BundleError(f"edge {bad[0]} ({i}, {j}) has an endpoint outside [0, {n})")
            loops = np.flatnonzero(edges[:, 0] == edges[:, 1])
            if len(loops):
                i = edges[loops[0], 0]
                raise BundleError(f"edge {loops[0]} ({i}, {i}) is a self-loop")
            edges = np.sort(edges, axis=1)
            keys = edges[:, 0] * n + edges[:, 1]
            uniq, first = np.unique(keys, return_index=True)
            if len(uniq) != len(keys):
                dup = np.setdiff1d(np.arange(len(keys)), first)[0]
                raise BundleError(f"edge {dup} ({edges[dup, 0]}, {edges[dup, 1]}) is a duplicate")
            edges = edges[np.argsort(keys, kind="stable")]
        edges.setflags(write=False)
        attrs.setflags(write=False)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "attributes", attrs)
        nbrs = [[] for _ in range(n)]
        for i, j in edges.tolist():
            nbrs[i].append(j)
            nbrs[j].append(i)
        object.__setattr__(self, "neighbor_index", tuple(frozenset(x) for x in nbrs))

    @property
    def num_attrs(self):
        return self.attributes.shape[1]

    @property
    def num_edges(self):
        return len(self.edges)

    def closed_csr(self):
        """CSR (indptr, indices) of A + I with sorted column indices."""
        n = self.num_nodes
        if len(self.edges):
            r = np.concatenate([self.edges[:, 0], self.edges[:, 1], np.arange(n)])
            c = np.concatenate([self.edges[:, 1], self.edges[:, 0], np.arange(n)])
        else:
            r = c = np.arange(n)
        order = np.lexsort((c, r))
        indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=n))]).astype(np.int64)
        return indptr, c[order].astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, AttributedGraph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.edges, other.edges)
                and self.attributes.dtype == other.attributes.dtype
                and self.attributes.tobytes() == other.attributes.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class LabelSet:
    labels: np.ndarray
    observed_mask: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        mask = np.array(self.observed_mask, dtype=bool)
        if labels.shape != mask.shape or labels.ndim != 1:
            raise BundleError("labels and observed_mask must be equal-length vectors")
        if not np.isin(labels, (0, 1)).all():
            raise BundleError("labels must be 0 or 1")
        labels.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "observed_mask", mask)

    @property
    def num_anomalies(self):
        return int(self.labels.sum())

    def __eq__(self, other):
        if not isinstance(other, LabelSet):
            return NotImplemented
        return (np.array_equal(self.labels, other.labels)
                and np.array_equal(self.observed_mask, other.observed_mask))

    __hash__ = None


@dataclass(frozen=True)
class DataSplit:
    train_ids: tuple
    test_ids: tuple
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "train_ids", tuple(int(i) for i in self.train_ids))
        object.__setattr__(self, "test_ids", tuple(int(i) for i in self.test_ids))
        if set(self.train_ids) & set(self.test_ids):
            raise BundleError("train and test ids overlap")


@dataclass(frozen=True)
class DatasetBundle:
    graph: AttributedGraph
    labels: LabelSet
    split: DataSplit | None = None
    name: str = "bundle"
    provenance: str = ""

    def __post_init__(self):
        n = self.graph.num_nodes
        if len(self.labels.labels) != n:
            raise BundleError(f"{len(self.labels.labels)} labels for a {n}-node graph")
        if self.split is not None:
            ids = np.asarray(self.split.train_ids + self.split.test_ids, dtype=np.int64)
            if len(ids) and (ids.min() < 0 or ids.max() >= n):
                raise BundleError("split references a node outside the graph")
            if len(ids) and not self.labels.observed_mask[ids].all():
                raise BundleError("split contains nodes without an observed label")

    def with_split(self, split):
        return replace(self, split=split)


# ---------------------------------------------------------------------------
# propagation

def normalized_propagation_matrix(graph, normalization="symmetric"):
    """D^-1/2 (A + I) D^-1/2 as a CSR matrix.

    ``normalization="mean"`` gives the row-stochastic D^-1 (A + I) instead.
    """
    indptr, indices = graph.closed_csr()
    deg = np.diff(indptr).astype(np.float64)
    rows = np.repeat(np.arange(graph.num_nodes), np.diff(indptr))
    if normalization == "symmetric":
        inv = 1.0 / np.sqrt(deg)
        data = inv[rows] * inv[indices]
    elif normalization == "mean":
        data = 1.0 / deg[rows]
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    n = graph.num_nodes
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def row_normalize(attributes):
    """L2-normalize each attribute row; all-zero rows stay zero."""
    x = np.asarray(attributes, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


# ---------------------------------------------------------------------------
# splitting

def make_split(labels, train_fraction=0.2, seed=0):
    """Stratified split of the observed nodes.

    Each class contributes ``round(train_fraction * class_size)`` nodes to the
    training set, so both halves keep the global anomaly proportion.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    observed = np.flatnonzero(labels.observed_mask)
    y = labels.labels[observed]
    rng = np.random.default_rng([int(seed), 0x53504C54])
    train, test = [], []
    for cls in (1, 0):
        members = observed[y == cls]
        if len(members) == 0:
            kind = "anomalous" if cls == 1 else "normal"
            raise BundleError(f"no observed {kind} nodes; stratified split impossible")
        members = rng.permutation(members)
        cut = int(np.floor(train_fraction * len(members) + 0.5))
        cut = min(max(cut, 1), len(members) - 1) if len(members) > 1 else 1
        train.append(members[:cut])
        test.append(members[cut:])
    return DataSplit(np.sort(np.concatenate(train)), np.sort(np.concatenate(test)), int(seed))


# ---------------------------------------------------------------------------
# synthetic data

def random_graph(num_nodes, num_attrs, edge_prob, seed=0, communities=10, homophily=0.9,
                 attr_noise=0.5):
    """Planted-partition topology with community-correlated attributes.

    Nodes get a uniform community label; the expected edge density is
    ``edge_prob`` with a ``homophily`` fraction of edges inside communities.
    Attributes are the community centroid (standard normal) plus isotropic
    noise of scale ``attr_noise``. ``communities=1`` is plain Erdos-Renyi.
    Edge probabilities above 1 (tiny dense graphs) are capped.
    """
    if num_nodes < 1 or num_attrs < 1 or not 0.0 <= edge_prob <= 1.0:
        raise ValueError("need num_nodes >= 1, num_attrs >= 1 and edge_prob in [0, 1]")
    if communities < 1 or not 0.0 <= homophily <= 1.0 or attr_noise < 0:
        raise ValueError("need communities >= 1, homophily in [0, 1], attr_noise >= 0")
    n = int(num_nodes)
    rng = np.random.default_rng([int(seed), 0x47524150])
    comm = rng.integers(0, communities, size=n)
    sizes = np.bincount(comm, minlength=communities)
    same_pairs = int((sizes * (sizes - 1) // 2).sum())
    diff_pairs = n * (n - 1) // 2 - same_pairs
    expected = edge_prob * (same_pairs + diff_pairs)
    if diff_pairs == 0 or same_pairs == 0:
        p_in = p_out = edge_prob
    else:
        p_in = homophily * expected / same_pairs
        p_out = (1.0 - homophily) * expected / diff_pairs
    p_in, p_out = min(p_in, 1.0), min(p_out, 1.0)
    src, dst = [], []
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        prob = np.where(comm[j] == comm[i], p_in, p_out)
        hit = j[rng.random(len(j)) < prob]
        src.append(np.full(len(hit), i))
        dst.append(hit)
    edges = np.stack([np.concatenate(src or [[]]), np.concatenate(dst or [[]])], axis=1)
    centroids = rng.standard_normal((communities, num_attrs))
    attrs = centroids[comm] + attr_noise * rng.standard_normal((n, num_attrs))
    return AttributedGraph(n, edges.astype(np.int64), attrs.astype(np.float32))


def inject_anomalies(graph, clique_size, num_cliques, num_attribute_anomalies,
                     candidate_pool=50, seed=0, name="injected"):
    """Inject clique (structural) and farthest-row (attribute) anomalies.

    Structural: ``num_cliques`` disjoint node groups of ``clique_size`` are made
    fully connected. Attribute: each chosen node gets the attribute row of the
    Euclidean-farthest node among ``candidate_pool`` random draws.
    """
    n = graph.num_nodes
    m, c, a = int(clique_size), int(num_cliques), int(num_attribute_anomalies)
    if min(m, c, a) < 0:
        raise ValueError("counts must be non-negative")
    if m * c + a > n:
        raise ValueError(f"{m}*{c} clique nodes + {a} attribute anomalies exceed {n} nodes")
    if a and candidate_pool < 1:
        raise ValueError("candidate_pool must be >= 1")
    rng = np.random.default_rng([int(seed), 0x494E4A])
    chosen = rng.permutation(n)[: m * c + a]
    cliques = chosen[: m * c].reshape(c, m) if m * c else np.empty((0, m), dtype=np.int64)
    attr_nodes = chosen[m * c:]

    new_edges = []
    for group in cliques:
        g = np.sort(group)
        ii, jj = np.triu_indices(len(g), k=1)
        new_edges.append(np.stack([g[ii], g[jj]], axis=1))
    edges = graph.edges
    if new_edges:
        edges = np.unique(np.concatenate([edges] + new_edges), axis=0)

    x = np.array(graph.attributes, copy=True)
    source = graph.attributes
    for node in attr_nodes:
        pool = rng.choice(n, size=min(candidate_pool, n), replace=False)
        dist = np.linalg.norm(source[pool].astype(np.float64) - source[node].astype(np.float64),
                              axis=1)
        x[node] = source[pool[int(np.argmax(dist))]]

    labels = np.zeros(n, dtype=np.int64)
    labels[chosen] = 1
    provenance = (f"inject(clique_size={m}, num_cliques={c}, attr_anomalies={a}, "
                  f"candidate_pool={candidate_pool}, seed={seed})")
    return DatasetBundle(AttributedGraph(n, edges, x), LabelSet(labels, np.ones(n, dtype=bool)),
                         name=name, provenance=provenance)


def from_arrays(adjacency, attributes, labels, name="converted", provenance=""):
    """Converter hook: build a bundle from in-memory arrays.

    ``adjacency`` may be dense or scipy-sparse; it is symmetrised and self
    loops are dropped. Use this to import third-party datasets after loading
    them with whatever reader they need.
    """
    adj = sp.coo_matrix(adjacency)
    keep = adj.row != adj.col
    r, c = adj.row[keep], adj.col[keep]
    pairs = np.unique(np.sort(np.stack([r, c], axis=1), axis=1), axis=0)
    x = np.asarray(attributes, dtype=np.float32)
    if sp.issparse(attributes):
        x = np.asarray(attributes.todense(), dtype=np.float32)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    y = (y != 0).astype(np.int64)
    return DatasetBundle(AttributedGraph(x.shape[0], pairs, x),
                         LabelSet(y, np.ones(len(y), dtype=bool)), name=name,
                         provenance=provenance)


# ---------------------------------------------------------------------------
# bundle io

_REQUIRED = ("meta.json", "edges.tsv", "features.bin", "labels.tsv")


def save_bundle(bundle, path, fingerprint=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    meta = {"name": bundle.name, "num_nodes": g.num_nodes, "num_attrs": g.num_attrs,
            "provenance": bundle.provenance}
    if fingerprint:
        meta["fingerprint"] = fingerprint
    atomic_write(path / "meta.json", (json.dumps(meta, indent=2) + "\n").encode())
    atomic_write(path / "edges.tsv",
                  "".join(f"{i}\t{j}\n" for i, j in g.edges.tolist()).encode())
    rows, cols = g.attributes.shape
    payload = _FEATURE_HEADER.pack(rows, cols) + g.attributes.astype("<f4").tobytes(order="C")
    atomic_write(path / "features.bin", payload)
    lab = bundle.labels
    lines = [f"{i}\t{int(y)}\n" for i, (y, seen) in
             enumerate(zip(lab.labels.tolist(), lab.observed_mask.tolist())) if seen]
    atomic_write(path / "labels.tsv", "".join(lines).encode())
    split_path = path / "splits.json"
    if bundle.split is not None:
        s = bundle.split
        doc = {"seed": s.seed, "train_ids": list(s.train_ids), "test_ids": list(s.test_ids)}
        atomic_write(split_path, (json.dumps(doc) + "\n").encode())
    elif split_path.exists():
        split_path.unlink()


def load_bundle(path):
    path = Path(path)
    if not path.is_dir():
        raise BundleError(f"{path} is not a bundle directory")
    for name in _REQUIRED:
        if not (path / name).is_file():
            raise BundleError(f"{path}: missing {name}")
    try:
        meta = json.loads((path / "meta.json").read_text())
        n, k = int(meta["num_nodes"]), int(meta["num_attrs"])
    except (ValueError, KeyError, TypeError) as exc:
        raise BundleError(f"{path / 'meta.json'}: {exc}") from exc

    raw = (path / "features.bin").read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise BundleError("features.bin: truncated header")
    rows, cols = _FEATURE_HEADER.unpack_from(raw)
    if (rows, cols) != (n, k):
        raise BundleError(f"features.bin is {rows}x{cols} but meta.json says {n}x{k}")
    body = raw[_FEATURE_HEADER.size:]
    if len(body) != 4 * rows * cols:
        raise BundleError(f"features.bin: expected {4 * rows * cols} payload bytes, got {len(body)}")
    attrs = np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)

    edges = []
    for lineno, line in enumerate((path / "edges.tsv").read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            i, j = int(parts[0]), int(parts[1])
        except (IndexError, ValueError) as exc:
            raise BundleError(f"edges.tsv line {lineno}: cannot parse {line!r}") from exc
        if len(parts) != 2:
            raise BundleError(f"edges.tsv line {lineno}: expected two ids, got {line!r}")
        if i == j:
            raise BundleError(f"edges.tsv line {lineno}: self-loop ({i}, {j})")
        if not (0 <= i < n and 0 <= j < n):
            raise BundleError(f"edges.tsv line {lineno}: node id out of range [0, {n}) in {line!r}")
        edges.append((i, j))

    labels = np.zeros(n, dtype=np.int64)
    observed = np.zeros(n, dtype=bool)
    for lineno, line in enumerate((path / "labels.tsv").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            node, y = (int(v) for v in line.split())
        except ValueError as exc:
            raise BundleError(f"labels.tsv line {lineno}: cannot parse {line!r}") from exc
        if not 0 <= node < n or y not in (0, 1):
            raise BundleError(f"labels.tsv line {lineno}: invalid record {line!r}")
        labels[node] = y
        observed[node] = True

    split = None
    if (path / "splits.json").is_file():
        doc = json.loads((path / "splits.json").read_text())
        split = DataSplit(doc["train_ids"], doc["test_ids"], int(doc["seed"]))

    graph = AttributedGraph(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), attrs)
    return DatasetBundle(graph, LabelSet(labels, observed), split,
                         name=meta.get("name", path.name), provenance=meta.get("provenance", ""))
