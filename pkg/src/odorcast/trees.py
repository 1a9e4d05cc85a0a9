"""CART trees, Random Forest / Extremely Randomized Trees, and forest-derived tools.

Trees are grown without a depth limit until a node is pure, holds fewer than
``min_samples_split`` samples, or no candidate split lowers impurity. Samples
with ``x <= threshold`` go left. Ties between equally good splits resolve to
the lowest feature index, then the lowest threshold.

Every tree draws from its own generator seeded from the forest's master seed
and the tree index, so fitted models do not depend on ``n_jobs``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

# impurity decreases at or below this are treated as "no improvement"
MIN_IMPROVEMENT = 1e-12


@dataclass
class Tree:
    """Flat array representation of a fitted tree; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # class counts (n_nodes, n_classes) or means (n_nodes, 1)
    n_samples: np.ndarray
    impurity: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.node_count):
            rec = {"id": i, "n_samples": int(self.n_samples[i]), "impurity": float(self.impurity[i])}
            if self.feature[i] >= 0:
                rec.update(
                    feature=int(self.feature[i]),
                    threshold=float(self.threshold[i]),
                    left=int(self.left[i]),
                    right=int(self.right[i]),
                )
            rec["value"] = [float(v) for v in self.value[i]]
            nodes.append(rec)
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes = d["nodes"]
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.full(n, np.nan)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        for rec in nodes:
            i = rec["id"]
            if "feature" in rec:
                feature[i], threshold[i] = rec["feature"], rec["threshold"]
                left[i], right[i] = rec["left"], rec["right"]
        return cls(
            feature,
            threshold,
            left,
            right,
            np.array([rec["value"] for rec in nodes], dtype=float),
            np.array([rec["n_samples"] for rec in nodes], dtype=np.int64),
            np.array([rec["impurity"] for rec in nodes], dtype=float),
        )


def gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.dot(p, p))


def _best_split_classification(Xn, Yn, feats, parent_imp):
    m = Xn.shape[0]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    left = np.cumsum(Yn[order], axis=0)[:-1]  # (m-1, f, K)
    total = left[-1] + Yn[order[-1]]
    right = total - left
    nl = np.arange(1, m, dtype=float)[:, None]
    nr = m - nl
    gl = 1.0 - np.sum(left * left, axis=2) / (nl * nl)
    gr = 1.0 - np.sum(right * right, axis=2) / (nr * nr)
    gain = parent_imp - (nl * gl + nr * gr) / m
    return _pick(gain, xs, feats)


def _best_split_regression(Xn, yn, feats, parent_imp):
    m = Xn.shape[0]
    yc = yn - yn.mean()
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = yc[order]
    s1 = np.cumsum(ys, axis=0)[:-1]
    s2 = np.cumsum(ys * ys, axis=0)[:-1]
    t1, t2 = yc.sum(), np.dot(yc, yc)
    nl = np.arange(1, m, dtype=float)[:, None]
    nr = m - nl
    sse = (s2 - s1 * s1 / nl) + ((t2 - s2) - (t1 - s1) ** 2 / nr)
    gain = parent_imp - sse / m
    return _pick(gain, xs, feats)


def _pick(gain, xs, feats):
    gain = np.where(xs[:-1] < xs[1:], gain, -np.inf)
    flat = gain.T.ravel()  # feature-major: argmax picks lowest feature, then lowest threshold
    k = int(np.argmax(flat))
    best = flat[k]
    if not best > MIN_IMPROVEMENT:
        return None
    j, p = divmod(k, gain.shape[0])
    lo, hi = xs[p, j], xs[p + 1, j]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr), float(best)


def _random_split(Xn, Yn, yn, feats, parent_imp, rng, classification):
    lo = Xn.min(axis=0)
    hi = Xn.max(axis=0)
    usable = np.flatnonzero(hi > lo)
    if usable.size == 0:
        return None
    thr = rng.uniform(lo[usable], hi[usable])
    mask = Xn[:, usable] <= thr  # (m, u)
    m = Xn.shape[0]
    nl = mask.sum(axis=0).astype(float)
    nr = m - nl
    if classification:
        left = mask.T.astype(float) @ Yn  # (u, K)
        right = Yn.sum(axis=0) - left
        with np.errstate(invalid="ignore", divide="ignore"):
            gl = 1.0 - np.sum(left * left, axis=1) / (nl * nl)
            gr = 1.0 - np.sum(right * right, axis=1) / (nr * nr)
        gain = parent_imp - (nl * np.nan_to_num(gl) + nr * np.nan_to_num(gr)) / m
    else:
        yc = yn - yn.mean()
        s1 = mask.T.astype(float) @ yc
        s2 = mask.T.astype(float) @ (yc * yc)
        t1, t2 = yc.sum(), np.dot(yc, yc)
        with np.errstate(invalid="ignore", divide="ignore"):
            sse = np.nan_to_num(s2 - s1 * s1 / nl) + np.nan_to_num((t2 - s2) - (t1 - s1) ** 2 / nr)
        gain = parent_imp - sse / m
    gain = np.where((nl > 0) & (nr > 0), gain, -np.inf)
    k = int(np.argmax(gain))
    if not gain[k] > MIN_IMPROVEMENT:
        return None
    return int(feats[usable[k]]), float(thr[k]), float(gain[k])


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int | None,
    max_features: int,
    min_samples_split: int = 2,
    splitter: str = "best",
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow one CART tree.

    ``y`` holds class indices when ``n_classes`` is given (Gini criterion) and
    real targets otherwise (variance reduction). With ``splitter="random"``
    each candidate feature gets one threshold drawn uniformly between its node
    minimum and maximum, as in Extremely Randomized Trees.
    """
    n, p = X.shape
    classification = n_classes is not None
    if rng is None:
        rng = np.random.default_rng(0)
    Y = np.eye(n_classes)[y] if classification else None
    yf = None if classification else np.asarray(y, dtype=float)

    feature, threshold, left, right, value, n_samples, impurity = [], [], [], [], [], [], []

    def new_node(idx):
        if classification:
            counts = Y[idx].sum(axis=0)
            imp = gini(counts)
            val = counts
        else:
            yy = yf[idx]
            imp = float(np.var(yy))
            val = np.array([yy.mean()])
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(val)
        n_samples.append(len(idx))
        impurity.append(imp)
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n))]
    all_feats = np.arange(p)
    while stack:
        node, idx = stack.pop()
        imp = impurity[node]
        if len(idx) < min_samples_split or imp <= 0.0:
            continue
        if max_features < p:
            feats = np.sort(rng.choice(p, size=max_features, replace=False))
        else:
            feats = all_feats
        Xn = X[np.ix_(idx, feats)]
        if splitter == "best":
            if classification:
                split = _best_split_classification(Xn, Y[idx], feats, imp)
            else:
                split = _best_split_regression(Xn, yf[idx], feats, imp)
        else:
            split = _random_split(
                Xn, Y[idx] if classification else None, None if classification else yf[idx], feats, imp, rng, classification
            )
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # push right first so the left subtree is numbered first
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float).reshape(len(feature), -1),
        np.array(n_samples, dtype=np.int64),
        np.array(impurity, dtype=float),
    )


def resolve_max_features(max_features, n_features: int) -> int:
    if max_features is None:
        k = n_features
    elif max_features == "sqrt":
        k = int(math.sqrt(n_features))
    elif max_features == "log2":
        k = int(math.log2(n_features))
    elif isinstance(max_features, float):
        k = int(max_features * n_features)
    else:
        k = int(max_features)
    k = max(1, k)
    if k > n_features:
        raise ValueError(f"max_features={max_features} exceeds the {n_features} available features")
    return k


def tree_importances(tree: Tree) -> np.ndarray:
    """Unnormalised impurity decrease per feature, weighted by node sample share."""
    n_features = int(tree.feature.max()) + 1 if (tree.feature >= 0).any() else 0
    out = np.zeros(max(n_features, 0))
    total = tree.n_samples[0]
    for i in np.flatnonzero(tree.feature >= 0):
        l, r = tree.left[i], tree.right[i]
        nt = tree.n_samples[i]
        child = (tree.n_samples[l] * tree.impurity[l] + tree.n_samples[r] * tree.impurity[r]) / nt
        out[tree.feature[i]] += nt / total * (tree.impurity[i] - child)
    return out


def _tree_seeds(master_seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(n, dtype=np.uint64)]


class _TreeEstimator(BaseEstimator):
    _classification = True

    def _prepare(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=not self._classification)
        if X.shape[0] < max(2, self.min_samples_split):
            raise ValueError(f"need at least {max(2, self.min_samples_split)} rows to fit")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self._classification:
            self.classes_, y = np.unique(y, return_inverse=True)
            self.n_classes_ = len(self.classes_)
        else:
            y = y.astype(float)
        self.n_features_in_ = X.shape[1]
        self.max_features_ = resolve_max_features(self.max_features, X.shape[1])
        return X, y

    def _check_X(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        return X

    def _grow(self, X, y, seed):
        return grow_tree(
            X,
            y,
            self.n_classes_ if self._classification else None,
            self.max_features_,
            self.min_samples_split,
            self.splitter,
            np.random.default_rng(seed),
        )


class DecisionTreeClassifier(ClassifierMixin, _TreeEstimator):
    """Single CART classifier (Gini impurity, midpoint thresholds).

    Parameters
    ----------
    max_features : int, float, "sqrt", "log2" or None
        Features sampled without replacement at each node; None means all.
    min_samples_split : int
        Nodes with fewer samples become leaves.
    splitter : {"best", "random"}
        Exhaustive midpoint search or one uniform random threshold per feature.
    random_state : int
        Seed for feature sampling and random thresholds.
    """

    def __init__(self, max_features=None, min_samples_split=2, splitter="best", random_state=0):
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.splitter = splitter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._prepare(X, y)
        self.tree_ = self._grow(X, y, self.random_state)
        return self

    def apply(self, X):
        return self.tree_.apply(self._check_X(X))

    def predict_proba(self, X):
        counts = self.tree_.value[self.apply(X)]
        return counts / counts.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @property
    def feature_importances_(self):
        return _normalise(_padded(tree_importances(self.tree_), self.n_features_in_))


class DecisionTreeRegressor(RegressorMixin, _TreeEstimator):
    """Single CART regressor (variance reduction)."""

    _classification = False

    def __init__(self, max_features=None, min_samples_split=2, splitter="best", random_state=0):
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.splitter = splitter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._prepare(X, y)
        self.tree_ = self._grow(X, y, self.random_state)
        return self

    def apply(self, X):
        return self.tree_.apply(self._check_X(X))

    def predict(self, X):
        return self.tree_.value[self.apply(X), 0]


def _padded(v, n):
    out = np.zeros(n)
    out[: len(v)] = v
    return out


def _normalise(v):
    s = v.sum()
    return v / s if s > 0 else v


class _Forest(_TreeEstimator):
    def _splitter(self):
        if self.algorithm not in ("rf", "et"):
            raise ValueError(f"algorithm must be 'rf' or 'et', got {self.algorithm!r}")
        return "best" if self.algorithm == "rf" else "random"

    def fit(self, X, y):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")
        splitter = self._splitter()
        X, y = self._prepare(X, y)
        bootstrap = self.algorithm == "rf" if self.bootstrap is None else self.bootstrap
        self.tree_seeds_ = _tree_seeds(self.random_state, self.n_estimators)
        n = X.shape[0]
        n_classes = self.n_classes_ if self._classification else None

        def build(seed):
            rng = np.random.default_rng(seed)
            if bootstrap:
                idx = rng.integers(0, n, n)
                return grow_tree(X[idx], y[idx], n_classes, self.max_features_, self.min_samples_split, splitter, rng)
            return grow_tree(X, y, n_classes, self.max_features_, self.min_samples_split, splitter, rng)

        workers = self.n_jobs or 1
        if workers == 1:
            self.trees_ = [build(s) for s in self.tree_seeds_]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                self.trees_ = list(pool.map(build, self.tree_seeds_))
        return self

    def apply(self, X):
        X = self._check_X(X)
        return np.column_stack([t.apply(X) for t in self.trees_])

    def to_dict(self) -> dict:
        check_is_fitted(self)
        d = {
            "kind": type(self).__name__,
            "params": self.get_params(),
            "n_features_in": self.n_features_in_,
            "max_features_resolved": self.max_features_,
            "master_seed": self.random_state,
            "tree_seeds": self.tree_seeds_,
            "trees": [t.to_dict() for t in self.trees_],
        }
        if self._classification:
            d["classes"] = self.classes_.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict):
        model = cls(**d["params"])
        model.n_features_in_ = d["n_features_in"]
        model.max_features_ = d["max_features_resolved"]
        model.tree_seeds_ = d["tree_seeds"]
        model.trees_ = [Tree.from_dict(t) for t in d["trees"]]
        if "classes" in d:
            model.classes_ = np.array(d["classes"])
            model.n_classes_ = len(model.classes_)
        return model


class ForestClassifier(ClassifierMixin, _Forest):
    """Random Forest (``algorithm="rf"``) or Extremely Randomized Trees (``"et"``).

    RF trees see a bootstrap sample and search all midpoint thresholds; ET
    trees see the full sample and draw one random threshold per candidate
    feature. Class probabilities average per-tree leaf frequencies.
    """

    def __init__(self, n_estimators=1000, algorithm="rf", max_features="sqrt", min_samples_split=2,
                 bootstrap=None, random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.algorithm = algorithm
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def predict_proba(self, X):
        X = self._check_X(X)
        proba = np.zeros((X.shape[0], self.n_classes_))
        for t in self.trees_:
            counts = t.value[t.apply(X)]
            proba += counts / counts.sum(axis=1, keepdims=True)
        return proba / len(self.trees_)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @property
    def feature_importances_(self):
        check_is_fitted(self)
        return gini_importance(self)


class ForestRegressor(RegressorMixin, _Forest):
    """Regression counterpart of :class:`ForestClassifier`; predicts the mean leaf value."""

    _classification = False

    def __init__(self, n_estimators=200, algorithm="rf", max_features=None, min_samples_split=2,
                 bootstrap=None, random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.algorithm = algorithm
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def predict(self, X):
        X = self._check_X(X)
        return np.mean([t.value[t.apply(X), 0] for t in self.trees_], axis=0)


def gini_importance(model) -> np.ndarray:
    """Mean impurity decrease per feature over the trees, normalised to sum to 1."""
    if not getattr(model, "_classification", False):
        raise TypeError("Gini importance is defined for classification models only")
    trees = model.trees_ if hasattr(model, "trees_") else [model.tree_]
    total = np.zeros(model.n_features_in_)
    for t in trees:
        total += _padded(tree_importances(t), model.n_features_in_)
    return _normalise(total / len(trees))


class UnsupervisedForestProximity(TransformerMixin, BaseEstimator):
    """Pairwise distances from a forest that separates real rows from a column-shuffled copy.

    The synthetic copy resamples each column independently, with replacement,
    from its observed values. After fitting a Random Forest to tell the two
    apart, the similarity of two real rows is the fraction of trees that put
    them in the same leaf; the distance is one minus that.
    """

    def __init__(self, n_estimators=100, max_features="sqrt", min_samples_split=2, random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        n = X.shape[0]
        if n < 2:
            raise ValueError("need at least two rows")
        synth_ss, forest_ss = np.random.SeedSequence(self.random_state).spawn(2)
        rng = np.random.default_rng(synth_ss)
        synthetic = np.column_stack([X[rng.integers(0, n, n), j] for j in range(X.shape[1])])
        self.forest_ = ForestClassifier(
            n_estimators=self.n_estimators,
            algorithm="rf",
            max_features=self.max_features,
            min_samples_split=self.min_samples_split,
            random_state=int(forest_ss.generate_state(1, dtype=np.uint64)[0]),
            n_jobs=self.n_jobs,
        ).fit(np.vstack([X, synthetic]), np.r_[np.ones(n), np.zeros(n)])
        return self

    def transform(self, X):
        leaves = self.forest_.apply(X)
        n = leaves.shape[0]
        same = np.zeros((n, n))
        for t in range(leaves.shape[1]):
            col = leaves[:, t]
            same += col[:, None] == col[None, :]
        return 1.0 - same / leaves.shape[1]


def unsupervised_distance(X, n_estimators=100, max_features="sqrt", min_samples_split=2, master_seed=0, n_jobs=1):
    return UnsupervisedForestProximity(n_estimators, max_features, min_samples_split, master_seed, n_jobs).fit_transform(X)


def rfe_schedule(n_features: int, step: int, target: int) -> list[int]:
    """Number of features dropped at each elimination round."""
    if target < 1:
        raise ValueError("target must be at least 1")
    if target >= n_features:
        raise ValueError(f"target {target} must be below the feature count {n_features}")
    if step < 1:
        raise ValueError("step must be at least 1")
    drops = []
    remaining = n_features
    while remaining > target:
        d = min(step, remaining - target)
        drops.append(d)
        remaining -= d
    return drops


class RecursiveFeatureEliminator(TransformerMixin, BaseEstimator):
    """Drop the lowest Gini-importance features in rounds until ``n_features_to_select`` remain.

    Each round refits a Random Forest classifier on the survivors. On equal
    importance the later column is dropped first.
    """

    def __init__(self, n_features_to_select=30, step=50, n_estimators=100, max_features="sqrt",
                 min_samples_split=2, random_state=0, n_jobs=1):
        self.n_features_to_select = n_features_to_select
        self.step = step
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        schedule = rfe_schedule(X.shape[1], self.step, self.n_features_to_select)
        remaining = np.arange(X.shape[1])
        self.ranking_ = np.ones(X.shape[1], dtype=np.int64)
        self.drops_ = []
        for it, n_drop in enumerate(schedule):
            seed = int(np.random.SeedSequence([self.random_state, it]).generate_state(1, dtype=np.uint64)[0])
            forest = ForestClassifier(
                n_estimators=self.n_estimators,
                algorithm="rf",
                max_features=min(resolve_max_features(self.max_features, len(remaining)), len(remaining)),
                min_samples_split=self.min_samples_split,
                random_state=seed,
                n_jobs=self.n_jobs,
            ).fit(X[:, remaining], y)
            imp = forest.feature_importances_
            order = np.lexsort((-np.arange(len(remaining)), imp))
            dropped = remaining[order[:n_drop]]
            self.ranking_[dropped] = len(schedule) - it + 1
            self.drops_.append(sorted(int(d) for d in dropped))
            remaining = np.sort(remaining[order[n_drop:]])
        self.support_ = np.zeros(X.shape[1], dtype=bool)
        self.support_[remaining] = True
        self.n_iter_ = len(schedule)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "support_")
        return np.asarray(X)[:, self.support_]


def recursive_feature_elimination(X, y, step=50, target=30, **forest_params) -> list[int]:
    """Indices of the surviving features, in original column order."""
    rfe = RecursiveFeatureEliminator(n_features_to_select=target, step=step, **forest_params).fit(X, y)
    return [int(i) for i in np.flatnonzero(rfe.support_)]
