"""Ridge regression, CART regression trees and gradient boosting, written on numpy."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


class SingularSystemError(ValueError):
    """Unregularized normal equations have no unique solution."""


# ---------------------------------------------------------------------------
# ridge

@dataclass(frozen=True)
class RidgeConfig:
    lam: float = 1.0
    fit_intercept: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept


def ridge_fit(X, y, config: RidgeConfig = RidgeConfig()) -> LinearModel:
    r"""Solve the ridge normal equations.

    Minimizes :math:`\|y - Xw - b\|^2 + \lambda \|w\|^2`. The intercept is not
    penalized; it is recovered from column means after solving on centered
    data. With ``lam == 0`` a rank-deficient design raises
    :class:`SingularSystemError` rather than returning a minimum-norm answer.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with n, d >= 1 and len(y) == n")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite entries in X or y")
    d = X.shape[1]
    if config.fit_intercept:
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
    else:
        x_mean, y_mean = np.zeros(d), 0.0
        Xc, yc = X, y
    A = Xc.T @ Xc + config.lam * np.eye(d)
    if config.lam == 0 and np.linalg.matrix_rank(Xc) < d:
        raise SingularSystemError("design matrix is rank deficient; use lam > 0")
    w = np.linalg.solve(A, Xc.T @ yc)
    return LinearModel(w, float(y_mean - x_mean @ w))


# ---------------------------------------------------------------------------
# regression trees

@dataclass(frozen=True)
class TreeConfig:
    max_depth: int | None = None     # None means unlimited; 0 gives a single leaf
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class TreeNode:
    value: float
    n_samples: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


# Candidate SSEs closer than this (relative to the node's SSE) count as ties,
# so the feature/threshold tie-break does not hinge on rounding noise.
SPLIT_TIE_RTOL = 1e-10


def best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int = 1):
    """Exhaustive squared-error split search over midpoints of distinct values.

    Returns ``(feature, threshold, child_sse)`` or ``None`` when no split
    leaves ``min_samples_leaf`` rows on both sides. Ties go to the lowest
    feature index, then the lowest threshold.
    """
    n, d = X.shape
    if n < 2 * min_samples_leaf:
        return None
    r = y - y.mean()
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    rs = r[order]
    csum = np.cumsum(rs, axis=0)[:-1]
    csq = np.cumsum(rs * rs, axis=0)[:-1]
    tot, tot_sq = rs.sum(axis=0), (rs * rs).sum(axis=0)
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    sse = (csq - csum ** 2 / n_left) + ((tot_sq - csq) - (tot - csum) ** 2 / n_right)

    valid = xs[1:] > xs[:-1]
    valid &= (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    best = sse.min()
    tol = SPLIT_TIE_RTOL * max(float(tot_sq[0]), 1e-300)
    # argwhere on the transpose walks (feature, position) lexicographically
    j, i = np.argwhere((sse <= best + tol).T)[0]
    threshold = 0.5 * (xs[i, j] + xs[i + 1, j])
    return int(j), float(threshold), float(sse[i, j])


def tree_fit(X, y, config: TreeConfig = TreeConfig()) -> TreeNode:
    """Grow a regression tree greedily; leaves predict their training mean."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or len(y) < 1 or X.shape[0] != len(y):
        raise ValueError("X must be (n, d) with n >= 1 and len(y) == n")
    root = TreeNode(float(y.mean()), len(y))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        if (config.max_depth is not None and depth >= config.max_depth) \
                or len(idx) < config.min_samples_split or np.ptp(yi) == 0:
            continue
        split = best_split(X[idx], yi, config.min_samples_leaf)
        if split is None:
            continue
        j, thr, _ = split
        go_left = X[idx, j] <= thr
        li, ri = idx[go_left], idx[~go_left]
        node.feature, node.threshold = j, thr
        node.left = TreeNode(float(y[li].mean()), len(li))
        node.right = TreeNode(float(y[ri].mean()), len(ri))
        stack.append((node.right, ri, depth + 1))
        stack.append((node.left, li, depth + 1))
    return root


def tree_predict(node: TreeNode, x) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


@dataclass
class FlatTree:
    """Array form of a tree for vectorized prediction and serialization."""

    feature: np.ndarray      # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @classmethod
    def from_node(cls, root: TreeNode) -> "FlatTree":
        nodes, stack = [], [root]
        while stack:
            node = stack.pop()
            nodes.append(node)
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)
        pos = {id(n): i for i, n in enumerate(nodes)}
        leaf = [n.is_leaf for n in nodes]
        return cls(
            np.array([-1 if l else n.feature for n, l in zip(nodes, leaf)], dtype=np.int64),
            np.array([0.0 if l else n.threshold for n, l in zip(nodes, leaf)]),
            np.array([-1 if l else pos[id(n.left)] for n, l in zip(nodes, leaf)], dtype=np.int64),
            np.array([-1 if l else pos[id(n.right)] for n, l in zip(nodes, leaf)], dtype=np.int64),
            np.array([n.value for n in nodes]),
            np.array([n.n_samples for n in nodes], dtype=np.int64),
        )

    def to_node(self, i: int = 0) -> TreeNode:
        nodes = [TreeNode(float(v), int(c)) for v, c in zip(self.value, self.n_samples)]
        for k, node in enumerate(nodes):
            if self.feature[k] >= 0:
                node.feature, node.threshold = int(self.feature[k]), float(self.threshold[k])
                node.left, node.right = nodes[self.left[k]], nodes[self.right[k]]
        return nodes[i]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        at = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[at] >= 0
        while active.any():
            a = at[active]
            go_left = X[rows[active], self.feature[a]] <= self.threshold[a]
            at[active] = np.where(go_left, self.left[a], self.right[a])
            active = self.feature[at] >= 0
        return self.value[at]

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "FlatTree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=np.float64), np.array(d["n_samples"], dtype=np.int64))


def tree_depth(root: TreeNode) -> int:
    depth, stack = 0, [(root, 0)]
    while stack:
        node, dep = stack.pop()
        depth = max(depth, dep)
        if not node.is_leaf:
            stack += [(node.left, dep + 1), (node.right, dep + 1)]
    return depth


# ---------------------------------------------------------------------------
# gradient boosting

@dataclass(frozen=True)
class GBConfig:
    n_stages: int = 100
    learning_rate: float = 0.1
    subsample: float = 1.0
    tree: TreeConfig = field(default_factory=lambda: TreeConfig(max_depth=3))
    seed: int = 0

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")


@dataclass
class GBModel:
    init: float
    learning_rate: float
    trees: list[FlatTree]
    train_mse: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(len(X), self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out


def gbr_fit(X, y, config: GBConfig = GBConfig()) -> GBModel:
    """Least-squares gradient boosting with optional row subsampling.

    ``train_mse[k]`` is the training MSE after ``k`` stages, so the first
    entry belongs to the constant mean predictor.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = len(y)
    if n < 1:
        raise ValueError("need at least one row")
    rng = np.random.default_rng(config.seed)
    init = float(y.mean())
    F = np.full(n, init)
    model = GBModel(init, config.learning_rate, [], [float(np.mean((y - F) ** 2))])
    m = max(1, int(round(config.subsample * n)))
    for _ in range(config.n_stages):
        resid = y - F
        if m < n:
            idx = np.sort(rng.choice(n, size=m, replace=False))
            tree = FlatTree.from_node(tree_fit(X[idx], resid[idx], config.tree))
        else:
            tree = FlatTree.from_node(tree_fit(X, resid, config.tree))
        F = F + config.learning_rate * tree.predict(X)
        model.trees.append(tree)
        model.train_mse.append(float(np.mean((y - F) ** 2)))
    return model


def gbr_predict(model: GBModel, x) -> float:
    return float(model.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# estimator wrappers with a shared fit/predict/document surface

class MeanRegressor:
    """Predicts the training-target mean everywhere; the skill floor."""

    family = "mean"

    def __init__(self):
        self.mean_ = None

    def get_params(self) -> dict:
        return {}

    def fit(self, X, y, X_val=None, y_val=None):
        self.mean_ = float(np.mean(y))
        return self

    def predict(self, X):
        return np.full(len(X), self.mean_)

    def state_dict(self) -> dict:
        return {"mean": self.mean_}

    def load_state(self, state: dict):
        self.mean_ = float(state["mean"])
        return self


class RidgeRegressor:
    family = "ridge"

    def __init__(self, lam: float = 1.0, fit_intercept: bool = True):
        self.config = RidgeConfig(lam, fit_intercept)
        self.model_ = None

    def get_params(self) -> dict:
        return asdict(self.config)

    def fit(self, X, y, X_val=None, y_val=None):
        self.model_ = ridge_fit(X, y, self.config)
        return self

    def predict(self, X):
        return self.model_.predict(X)

    def state_dict(self) -> dict:
        return {"weights": self.model_.weights.tolist(), "intercept": self.model_.intercept}

    def load_state(self, state: dict):
        self.model_ = LinearModel(np.array(state["weights"], dtype=np.float64), float(state["intercept"]))
        return self


class TreeRegressor:
    family = "tree"

    def __init__(self, max_depth: int | None = None, min_samples_split: int = 2, min_samples_leaf: int = 1):
        self.config = TreeConfig(max_depth, min_samples_split, min_samples_leaf)
        self.tree_ = None

    def get_params(self) -> dict:
        return asdict(self.config)

    def fit(self, X, y, X_val=None, y_val=None):
        self.tree_ = FlatTree.from_node(tree_fit(X, y, self.config))
        return self

    def predict(self, X):
        return self.tree_.predict(X)

    def state_dict(self) -> dict:
        return {"tree": self.tree_.to_dict()}

    def load_state(self, state: dict):
        self.tree_ = FlatTree.from_dict(state["tree"])
        return self


class GBRegressor:
    family = "gb"

    def __init__(self, n_stages: int = 100, learning_rate: float = 0.1, subsample: float = 1.0,
                 max_depth: int | None = 3, min_samples_split: int = 2, min_samples_leaf: int = 1,
                 seed: int = 0):
        self.config = GBConfig(n_stages, learning_rate, subsample,
                               TreeConfig(max_depth, min_samples_split, min_samples_leaf), seed)
        self.model_ = None

    def get_params(self) -> dict:
        c = self.config
        return {"n_stages": c.n_stages, "learning_rate": c.learning_rate, "subsample": c.subsample,
                "max_depth": c.tree.max_depth, "min_samples_split": c.tree.min_samples_split,
                "min_samples_leaf": c.tree.min_samples_leaf, "seed": c.seed}

    def fit(self, X, y, X_val=None, y_val=None):
        self.model_ = gbr_fit(X, y, self.config)
        return self

    def predict(self, X):
        return self.model_.predict(X)

    def state_dict(self) -> dict:
        m = self.model_
        return {"init": m.init, "learning_rate": m.learning_rate,
                "trees": [t.to_dict() for t in m.trees], "train_mse": m.train_mse}

    def load_state(self, state: dict):
        self.model_ = GBModel(float(state["init"]), float(state["learning_rate"]),
                              [FlatTree.from_dict(t) for t in state["trees"]], list(state["train_mse"]))
        return self
