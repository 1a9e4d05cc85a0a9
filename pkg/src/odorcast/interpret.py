"""Distil a readable decision tree from a representative cluster of smell events."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .evaluate import EventPrf, event_prf
from .features import FeatureTable, build_interactions, fit_impute_standardize
from .trees import DecisionTreeClassifier, RecursiveFeatureEliminator, Tree, UnsupervisedForestProximity

log = logging.getLogger(__name__)


class NoClusterError(ValueError):
    pass


def check_distance_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if np.any(D < 0) or not np.all(np.isfinite(D)):
        raise ValueError("distance matrix has negative or non-finite entries")
    if not np.allclose(D, D.T, rtol=0, atol=1e-12):
        raise ValueError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(D)) > 1e-12):
        raise ValueError("distance matrix must have a zero diagonal")
    return D


class PrecomputedDBSCAN(ClusterMixin, BaseEstimator):
    """Density-based clustering over a precomputed distance matrix.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are grown from unvisited core points in ascending
    row order; a border point joins the first cluster that reaches it. Noise
    is labelled -1.
    """

    def __init__(self, eps=0.5, min_pts=5):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, D, y=None):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be at least 1")
        D = check_distance_matrix(D)
        n = D.shape[0]
        neighbours = [np.flatnonzero(D[i] <= self.eps) for i in range(n)]
        core = np.array([len(nb) >= self.min_pts for nb in neighbours], dtype=bool)
        labels = np.full(n, -1, dtype=np.int64)
        cid = 0
        for i in range(n):
            if not core[i] or labels[i] != -1:
                continue
            labels[i] = cid
            queue = deque([i])
            while queue:
                c = queue.popleft()
                for nb in neighbours[c]:
                    if labels[nb] == -1:
                        labels[nb] = cid
                        if core[nb]:
                            queue.append(nb)
            cid += 1
        self.labels_ = labels
        self.core_sample_mask_ = core
        self.n_clusters_ = cid
        return self


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    eps: float
    min_pts: int
    core: np.ndarray | None = None


def dbscan(distance, eps: float, min_pts: int) -> ClusterAssignment:
    model = PrecomputedDBSCAN(eps, min_pts).fit(distance)
    return ClusterAssignment(model.labels_, eps, min_pts, model.core_sample_mask_)


def select_cluster(assignment: ClusterAssignment | np.ndarray) -> int:
    """Id of the largest cluster; equal sizes go to the lower id."""
    labels = assignment.labels if isinstance(assignment, ClusterAssignment) else np.asarray(assignment)
    ids = labels[labels >= 0]
    if ids.size == 0:
        raise NoClusterError("no cluster found")
    counts = np.bincount(ids)
    return int(np.argmax(counts))


def sweep_dbscan(distance, eps_grid: Sequence[float], min_pts_grid: Sequence[int]) -> list[dict]:
    """Cluster statistics for each (eps, min_pts) pair, to help pick parameters."""
    out = []
    for eps in eps_grid:
        for mp in min_pts_grid:
            labels = dbscan(distance, eps, mp).labels
            sizes = np.bincount(labels[labels >= 0]) if (labels >= 0).any() else np.array([], dtype=int)
            out.append(
                {
                    "eps": float(eps),
                    "min_pts": int(mp),
                    "n_clusters": int(len(sizes)),
                    "n_noise": int((labels < 0).sum()),
                    "largest": int(sizes.max()) if len(sizes) else 0,
                }
            )
    return out


def point_biserial(binary, continuous) -> float:
    """Correlation between a 0/1 indicator and a continuous variable.

    Uses the population standard deviation of ``continuous``, which makes the
    result identical to the Pearson correlation of the two vectors.
    """
    b = np.asarray(binary)
    x = np.asarray(continuous, dtype=float)
    if b.shape != x.shape:
        raise ValueError("inputs differ in length")
    if not np.isin(b, (0, 1)).all():
        raise ValueError("binary vector must contain only 0 and 1")
    n1 = int(b.sum())
    n0 = len(b) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("binary vector must contain both classes")
    s = x.std()
    if s == 0:
        raise ValueError("continuous vector is constant")
    m1 = x[b == 1].mean()
    m0 = x[b == 0].mean()
    return float((m1 - m0) / s * np.sqrt(n1 * n0 / len(b) ** 2))


def render_tree(tree: Tree, feature_names: Sequence[str], classes: Sequence = (0, 1)) -> str:
    """Indented text with each node's split and its positive:negative sample counts."""
    pos = list(classes).index(1) if 1 in list(classes) else len(classes) - 1
    lines = []

    def counts(i):
        v = tree.value[i]
        return int(round(v[pos])), int(round(v.sum() - v[pos]))

    def walk(i, depth, prefix):
        p, n = counts(i)
        pad = "    " * depth
        if tree.feature[i] < 0:
            lines.append(f"{pad}{prefix}leaf  pos:neg = {p}:{n}")
            return
        name = feature_names[tree.feature[i]]
        lines.append(f"{pad}{prefix}{name} <= {tree.threshold[i]:.4g}  pos:neg = {p}:{n}")
        walk(tree.left[i], depth + 1, "yes: ")
        walk(tree.right[i], depth + 1, "no:  ")

    walk(0, 0, "")
    return "\n".join(lines)


@dataclass
class InterpretationResult:
    cluster_id: int
    cluster_sizes: list[int]
    eps: float
    min_pts: int
    coverage_fraction: float
    kept_features: list[str]
    root_feature: str | None
    tree: dict
    tree_text: str
    train: EventPrf
    test: EventPrf
    top_features: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        d["test"] = asdict(self.test)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def distill(
    values: np.ndarray,
    hours: np.ndarray,
    names: Sequence[str],
    target: np.ndarray,
    event_classes: np.ndarray | None = None,
    rfe_target: int = 30,
    rfe_step: int = 50,
    rfe_trees: int = 100,
    rfe_max_features="sqrt",
    min_samples_split: int = 2,
    test_fraction: float = 0.25,
    master_seed: int = 0,
    n_jobs: int = 1,
) -> dict:
    """Select features by recursive elimination, then fit one CART tree.

    ``values`` holds only the rows used for distillation (cluster members and
    negatives) in time order, and ``target`` marks cluster membership. The
    last ``test_fraction`` of rows is held out; precision/recall/F-score use
    the event-overlap metric on each part with ``hours`` as the timeline, so
    rows dropped between two positives split them into separate events.
    """
    if rfe_target < 1:
        raise ValueError("at least one feature must be kept")
    target = np.asarray(target, dtype=np.int64)
    n = len(target)
    cut = int(round(n * (1 - test_fraction)))
    if cut < 2 or cut >= n:
        raise ValueError("test_fraction leaves an empty training or test part")
    values = np.asarray(values, dtype=float)
    hours = np.asarray(hours, dtype=np.int64)
    Xtr, ytr = values[:cut], target[:cut]
    if rfe_target < values.shape[1]:
        rfe = RecursiveFeatureEliminator(
            n_features_to_select=rfe_target,
            step=rfe_step,
            n_estimators=rfe_trees,
            max_features=rfe_max_features,
            min_samples_split=min_samples_split,
            random_state=master_seed,
            n_jobs=n_jobs,
        ).fit(Xtr, ytr)
        kept = [int(i) for i in np.flatnonzero(rfe.support_)]
    else:
        kept = list(range(values.shape[1]))
    kept_names = [names[i] for i in kept]
    tree = DecisionTreeClassifier(min_samples_split=min_samples_split, random_state=master_seed)
    tree.fit(Xtr[:, kept], ytr)
    pred = tree.predict(values[:, kept])
    truth = target if event_classes is None else np.asarray(event_classes)
    train = event_prf(pred[:cut], truth[:cut], hours[:cut])
    test = event_prf(pred[cut:], truth[cut:], hours[cut:])
    return {"model": tree, "kept": kept, "names": kept_names, "train": train, "test": test}


def interpret_events(
    X: FeatureTable,
    classes: np.ndarray,
    base_columns: Sequence[str],
    eps: float,
    min_pts: int,
    proximity_trees: int = 100,
    rfe_target: int = 30,
    rfe_step: int = 50,
    rfe_trees: int = 100,
    min_samples_split: int = 2,
    test_fraction: float = 0.25,
    master_seed: int = 0,
    n_jobs: int = 1,
) -> InterpretationResult:
    """Interactions, proximity clustering of positive hours, then tree distillation."""
    classes = np.asarray(classes, dtype=np.int64)
    inter = build_interactions(X, base_columns)
    Z, _ = fit_impute_standardize(inter)
    pos = np.flatnonzero(classes == 1)
    if len(pos) < 2:
        raise NoClusterError("no cluster found: fewer than two positive samples")
    D = UnsupervisedForestProximity(
        n_estimators=proximity_trees, random_state=master_seed, n_jobs=n_jobs
    ).fit_transform(Z.values[pos])
    assignment = dbscan(D, eps, min_pts)
    cid = select_cluster(assignment)
    sizes = np.bincount(assignment.labels[assignment.labels >= 0]).tolist()
    members = pos[assignment.labels == cid]
    log.info("cluster %d holds %d of %d positive hours", cid, len(members), len(pos))

    rows = np.sort(np.concatenate([members, np.flatnonzero(classes == 0)]))
    target = np.isin(rows, members).astype(np.int64)
    out = distill(
        Z.values[rows],
        Z.hours[rows],
        Z.names,
        target,
        rfe_target=min(rfe_target, len(Z.names)),
        rfe_step=rfe_step,
        rfe_trees=rfe_trees,
        min_samples_split=min_samples_split,
        test_fraction=test_fraction,
        master_seed=master_seed,
        n_jobs=n_jobs,
    )
    model = out["model"]
    importances = model.feature_importances_
    top = []
    for j in np.argsort(-importances, kind="stable")[:5]:
        if importances[j] <= 0:
            break
        col = Z.values[:, out["kept"][j]]
        r = point_biserial(classes, col) if col.std() > 0 else float("nan")
        top.append({"name": out["names"][j], "importance": float(importances[j]), "point_biserial": r})
    root = model.tree_.feature[0]
    return InterpretationResult(
        cluster_id=cid,
        cluster_sizes=sizes,
        eps=float(eps),
        min_pts=int(min_pts),
        coverage_fraction=len(members) / len(pos),
        kept_features=out["names"],
        root_feature=out["names"][root] if root >= 0 else None,
        tree=model.tree_.to_dict(),
        tree_text=render_tree(model.tree_, out["names"], model.classes_),
        train=out["train"],
        test=out["test"],
        top_features=top,
    )
