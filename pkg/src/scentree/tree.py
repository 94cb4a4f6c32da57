"""Scenario-tree construction from trajectory samplers.

Per expanded node: draw M sample trajectories conditioned on the node's
accumulated history, cluster them with seeded k-means, turn cluster centroids
into child nodes weighted by cluster frequency, keep the top-L children by
cumulative path probability, renormalize, and recurse with the centroid
appended to the conditioning history.

Each node stores both its conditional branch probability (renormalized after
pruning) and its path probability (product along the root path), so the
probabilities at any stage always form a valid distribution.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SamplerError, ScentreeError
from .samplers import SamplerRequest, TrajectorySampler
from .seeding import mix_seed

_KMEANS_MAX_ITER = 100
_KMEANS_SHIFT_TOL = 1e-6


@dataclass(frozen=True)
class TreeConfig:
    """Shape of a scenario tree build.

    depth:            number of branching stages below the root.
    stage_horizon:    hours covered by one node (H).
    samples_per_node: trajectory draws per expansion (M).
    clusters:         k-means cluster count per expansion (K).
    keep_children:    children retained per parent after pruning (L);
                      may exceed `clusters`, the effective child count is
                      capped by the clusters actually found.
    series_dim:       dimension of the stochastic observation (D).
    master_seed:      64-bit seed from which all per-node seeds derive.
    """

    depth: int
    stage_horizon: int
    samples_per_node: int
    clusters: int
    keep_children: int
    series_dim: int = 1
    master_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("depth", "stage_horizon", "samples_per_node", "clusters",
                     "keep_children", "series_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
        if not 0 <= self.master_seed < (1 << 64):
            raise InvalidInputError("master_seed must fit in 64 unsigned bits")


@dataclass(eq=False)
class ScenarioNode:
    """One node: a stage_horizon x series_dim observation block with weights.

    The root carries the realized current observation block; every other node
    carries a cluster centroid as its forecast. `branch_prob` is conditional
    on the parent (after pruning and renormalization), `path_prob` is the
    product of branch probabilities from the root.
    """

    id: int
    parent_id: int | None
    stage: int
    forecast: np.ndarray
    branch_prob: float
    path_prob: float
    children: list[int] = field(default_factory=list)


@dataclass(eq=False)
class ScenarioTree:
    config: TreeConfig
    nodes: dict[int, ScenarioNode]
    root_id: int = 0

    def node(self, node_id: int) -> ScenarioNode:
        return self.nodes[node_id]

    @property
    def root(self) -> ScenarioNode:
        return self.nodes[self.root_id]

    def stage_nodes(self, t: int) -> list[ScenarioNode]:
        """Nodes at stage t in id order."""
        return [n for _, n in sorted(self.nodes.items()) if n.stage == t]

    def leaves(self) -> list[ScenarioNode]:
        return [n for _, n in sorted(self.nodes.items()) if not n.children]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True, eq=False)
class ClusterResult:
    """K-means output: labels per point, centroids, cluster sizes."""

    labels: np.ndarray  # (M,), values in [0, k_eff)
    centroids: np.ndarray  # (k_eff, dim)
    sizes: np.ndarray  # (k_eff,)
    k_eff: int


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin breaks distance ties toward the lowest centroid index
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(m)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        # total > 0 is guaranteed while j < number of distinct points
        centroids[j] = points[rng.choice(m, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(points: np.ndarray, k: int, seed: int, wcss_log: list | None = None) -> ClusterResult:
    """Seeded k-means with k-means++ initialization and Lloyd iterations.

    Deterministic given (points, k, seed). Iterations stop after 100 rounds
    or when the largest centroid shift drops below 1e-6. A cluster that
    empties is reseeded to the point farthest from its assigned centroid.
    When the input holds fewer than k distinct points the cluster count
    shrinks to the distinct-point count. If `wcss_log` is given, the
    within-cluster sum of squares after each assignment is appended to it.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise InvalidInputError("points must be a non-empty M x dim matrix")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("points contain non-finite values")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    m = pts.shape[0]
    k_eff = min(k, np.unique(pts, axis=0).shape[0])

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(pts, k_eff, rng)
    labels = _nearest(pts, centroids)
    for _ in range(_KMEANS_MAX_ITER):
        if wcss_log is not None:
            wcss_log.append(float(((pts - centroids[labels]) ** 2).sum()))
        new_centroids = _label_means(pts, labels, centroids, k_eff)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        labels = _nearest(pts, centroids)
        if shift < _KMEANS_SHIFT_TOL:
            break

    # Make the returned labels/centroids mutually consistent and drop any
    # cluster that ended empty (possible only in degenerate tie cases).
    for _ in range(k_eff):
        counts = np.bincount(labels, minlength=k_eff)
        if np.all(counts > 0):
            break
        centroids = _label_means(pts, labels, centroids, k_eff)
        labels = _nearest(pts, centroids)
    counts = np.bincount(labels, minlength=k_eff)
    keep = np.nonzero(counts > 0)[0]
    remap = np.full(k_eff, -1)
    remap[keep] = np.arange(keep.size)
    labels = remap[labels]
    k_eff = keep.size
    centroids = np.vstack([pts[labels == j].mean(axis=0) for j in range(k_eff)])
    sizes = np.bincount(labels, minlength=k_eff)
    return ClusterResult(labels=labels, centroids=centroids, sizes=sizes, k_eff=k_eff)


def _label_means(
    pts: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int
) -> np.ndarray:
    """Per-label means; empty clusters are reseeded to the farthest point."""
    out = np.empty_like(centroids)
    empties = []
    for j in range(k):
        members = labels == j
        if members.any():
            out[j] = pts[members].mean(axis=0)
        else:
            empties.append(j)
    if empties:
        dist = np.linalg.norm(pts - centroids[labels], axis=1)
        for j in empties:
            i = int(np.argmax(dist))
            out[j] = pts[i]
            dist[i] = -1.0  # one reseed per point
    return out


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------


def prune_and_renormalize(
    children: list[tuple[int, float]], keep: int
) -> list[tuple[int, float]]:
    """Keep the `keep` entries with the largest probability, renormalized.

    `children` holds (node_id, cumulative_prob) pairs; probability ties break
    toward the lower node id. The result is in descending-probability order
    and its probabilities sum to 1.
    """
    if keep < 1:
        raise InvalidInputError(f"keep must be >= 1, got {keep}")
    entries = list(children)
    if not entries:
        raise InvalidInputError("cannot prune an empty child list")
    if any(p <= 0 for _, p in entries):
        raise InvalidInputError("all child probabilities must be > 0")
    ranked = sorted(entries, key=lambda item: (-item[1], item[0]))
    kept = ranked[: min(keep, len(ranked))]
    total = sum(p for _, p in kept)
    return [(node_id, p / total) for node_id, p in kept]


# ---------------------------------------------------------------------------
# tree construction
# ---------------------------------------------------------------------------


def build_tree(
    sampler: TrajectorySampler,
    history: np.ndarray,
    config: TreeConfig,
    workers: int = 1,
) -> ScenarioTree:
    """Grow a scenario tree breadth-first from the observed history.

    Node ids are assigned in breadth-first dequeue order (root is 0) and each
    expansion is seeded by mix(master_seed, node id), so the result is
    bit-identical no matter how many workers expand a stage.
    """
    hist = np.asarray(history, dtype=float)
    if hist.ndim == 1:
        hist = hist[:, None]
    if hist.ndim != 2 or hist.shape[0] < 1:
        raise InvalidInputError("history must be a T x D matrix with T >= 1")
    if hist.shape[1] != config.series_dim:
        raise InvalidInputError(
            f"history dimension {hist.shape[1]} != config.series_dim {config.series_dim}"
        )
    if not np.all(np.isfinite(hist)):
        raise InvalidInputError("history contains non-finite values")
    if workers < 1:
        raise InvalidInputError("workers must be >= 1")

    h, d = config.stage_horizon, config.series_dim
    root_block = hist[-h:].copy() if hist.shape[0] >= h else hist.copy()
    root = ScenarioNode(
        id=0, parent_id=None, stage=0,
        forecast=root_block, branch_prob=1.0, path_prob=1.0,
    )
    nodes: dict[int, ScenarioNode] = {0: root}
    histories: dict[int, np.ndarray] = {0: hist}
    frontier = [0]
    next_id = 1

    def expand(node_id: int):
        """Sample, cluster, and prune one node; pure given the node seed."""
        node_seed = mix_seed(config.master_seed, node_id)
        req = SamplerRequest(
            history=histories[node_id],
            m=config.samples_per_node,
            h=h,
            seed=node_seed,
        )
        try:
            batch = sampler.sample(req)
        except ScentreeError as exc:
            raise SamplerError(f"sampler failed at node {node_id}: {exc}") from exc
        flat = batch.samples.reshape(config.samples_per_node, h * d)
        result = kmeans(flat, config.clusters, seed=mix_seed(node_seed, 1))
        parent_prob = nodes[node_id].path_prob
        entries = [
            (j, parent_prob * result.sizes[j] / config.samples_per_node)
            for j in range(result.k_eff)
        ]
        kept = prune_and_renormalize(entries, config.keep_children)
        return [(result.centroids[j].reshape(h, d), bp) for j, bp in kept]

    for _stage in range(config.depth):
        if workers > 1 and len(frontier) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                expansions = list(pool.map(expand, frontier))
        else:
            expansions = [expand(node_id) for node_id in frontier]
        next_frontier: list[int] = []
        for node_id, kept in zip(frontier, expansions):
            parent = nodes[node_id]
            for centroid, branch_prob in kept:
                child = ScenarioNode(
                    id=next_id,
                    parent_id=node_id,
                    stage=parent.stage + 1,
                    forecast=centroid,
                    branch_prob=branch_prob,
                    path_prob=parent.path_prob * branch_prob,
                )
                nodes[next_id] = child
                parent.children.append(next_id)
                histories[next_id] = np.vstack([histories[node_id], centroid])
                next_frontier.append(next_id)
                next_id += 1
            del histories[node_id]
        frontier = next_frontier

    return ScenarioTree(config=config, nodes=nodes, root_id=0)


def stage_probabilities(tree: ScenarioTree, t: int) -> dict[int, float]:
    """Path probability of every stage-t node; the values sum to 1."""
    if not 0 <= t <= tree.config.depth:
        raise InvalidInputError(
            f"stage {t} outside [0, {tree.config.depth}]"
        )
    return {n.id: n.path_prob for n in tree.stage_nodes(t)}


def trees_identical(a: ScenarioTree, b: ScenarioTree) -> bool:
    """Bit-for-bit structural equality (ids, topology, probabilities, blocks)."""
    if a.config != b.config or a.root_id != b.root_id:
        return False
    if set(a.nodes) != set(b.nodes):
        return False
    for nid, na in a.nodes.items():
        nb = b.nodes[nid]
        if (
            na.parent_id != nb.parent_id
            or na.stage != nb.stage
            or na.branch_prob != nb.branch_prob
            or na.path_prob != nb.path_prob
            or na.children != nb.children
            or na.forecast.shape != nb.forecast.shape
            or not np.array_equal(na.forecast, nb.forecast)
        ):
            return False
    return True


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_dot(tree: ScenarioTree) -> str:
    """Deterministic DOT rendering: nodes in id order, then edges."""
    lines = ["digraph scenario_tree {", "  rankdir=LR;", "  node [shape=box];"]
    for nid in sorted(tree.nodes):
        n = tree.nodes[nid]
        mean_forecast = float(n.forecast.mean())
        lines.append(
            f'  n{nid} [label="{nid} | {n.stage} | {n.path_prob:.4f} | '
            f'{mean_forecast:.2f}"];'
        )
    for nid in sorted(tree.nodes):
        for child_id in tree.nodes[nid].children:
            bp = tree.nodes[child_id].branch_prob
            lines.append(f'  n{nid} -> n{child_id} [label="{bp:.4f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def tree_to_json(tree: ScenarioTree) -> str:
    """Serialize to the documented JSON schema.

    Probabilities are written as decimal literals with 17 significant digits
    (exact round-trip for doubles); forecast arrays are row-major.
    """
    cfg = tree.config
    config_json = json.dumps(
        {
            "depth": cfg.depth,
            "stage_horizon": cfg.stage_horizon,
            "samples_per_node": cfg.samples_per_node,
            "clusters": cfg.clusters,
            "keep_children": cfg.keep_children,
            "series_dim": cfg.series_dim,
            "master_seed": cfg.master_seed,
        }
    )
    node_chunks = []
    for nid in sorted(tree.nodes):
        n = tree.nodes[nid]
        parent = "null" if n.parent_id is None else str(n.parent_id)
        forecast = json.dumps(
            [[format(v, ".17g") for v in row] for row in n.forecast.tolist()]
        ).replace('"', "")
        node_chunks.append(
            f'{{"id": {n.id}, "parent_id": {parent}, "stage": {n.stage}, '
            f'"branch_prob": {n.branch_prob:.17g}, '
            f'"path_prob": {n.path_prob:.17g}, '
            f'"forecast": {forecast}}}'
        )
    return (
        '{"config": ' + config_json + ', "nodes": [' + ", ".join(node_chunks) + "]}\n"
    )


def tree_from_json(text: str) -> ScenarioTree:
    doc = json.loads(text)
    cfg = TreeConfig(**doc["config"])
    nodes: dict[int, ScenarioNode] = {}
    root_id = None
    for entry in doc["nodes"]:
        node = ScenarioNode(
            id=int(entry["id"]),
            parent_id=None if entry["parent_id"] is None else int(entry["parent_id"]),
            stage=int(entry["stage"]),
            forecast=np.asarray(entry["forecast"], dtype=float),
            branch_prob=float(entry["branch_prob"]),
            path_prob=float(entry["path_prob"]),
        )
        nodes[node.id] = node
        if node.parent_id is None:
            root_id = node.id
    if root_id is None:
        raise InvalidInputError("tree JSON has no root node")
    for nid in sorted(nodes):
        parent_id = nodes[nid].parent_id
        if parent_id is not None:
            nodes[parent_id].children.append(nid)
    return ScenarioTree(config=cfg, nodes=nodes, root_id=root_id)
