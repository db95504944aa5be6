"""Gradient-boosted regression trees on the binomial deviance.

Splits are searched exactly over the sorted unique training values of each
feature (features are rank-coded once per fit), which makes the fitted
partition invariant to strictly monotone feature transforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .logistic import sigmoid


@dataclass(frozen=True)
class GbcConfig:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 2
    min_samples_split: int = 150
    min_samples_leaf: int = 100


@dataclass
class Tree:
    # node arrays; feature == -1 marks a leaf
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                return node
            idx = np.flatnonzero(internal)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "gain")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=float), np.array(d["gain"], dtype=float))


@dataclass
class BoostedTrees:
    init: float
    trees: list[Tree]
    learning_rate: float
    n_features: int
    train_deviance: list[float] = field(default_factory=list)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def feature_importances(self) -> np.ndarray:
        return gini_importance(self)


@numba.njit(cache=True)
def _best_split(codes, rows, resid, w, offsets, nbins_total, min_leaf):
    """Best (feature, code, gain, n_left) for a node; feature -1 if none is valid.

    Gain is the weighted squared-error decrease W_l*W_r/W*(mean_l - mean_r)^2.
    Ties keep the lowest feature index, then the lowest threshold.
    """
    p = codes.shape[1]
    sw = np.zeros(nbins_total)
    sr = np.zeros(nbins_total)
    cnt = np.zeros(nbins_total, dtype=np.int64)
    tot_w = 0.0
    tot_r = 0.0
    for q in range(rows.shape[0]):
        i = rows[q]
        wi = w[i]
        ri = wi * resid[i]
        tot_w += wi
        tot_r += ri
        for j in range(p):
            b = offsets[j] + codes[i, j]
            sw[b] += wi
            sr[b] += ri
            cnt[b] += 1
    n = rows.shape[0]
    best_f = -1
    best_c = -1
    best_gain = 0.0
    best_nl = 0
    for j in range(p):
        cw = 0.0
        cr = 0.0
        cn = 0
        for b in range(offsets[j], offsets[j + 1] - 1):
            cw += sw[b]
            cr += sr[b]
            cn += cnt[b]
            if cn < min_leaf:
                continue
            if n - cn < min_leaf:
                break
            wl = cw
            wr = tot_w - cw
            if wl <= 0.0 or wr <= 0.0:
                continue
            diff = cr / wl - (tot_r - cr) / wr
            gain = wl * wr / (wl + wr) * diff * diff
            if gain > best_gain:
                best_gain = gain
                best_f = j
                best_c = b - offsets[j]
                best_nl = cn
    return best_f, best_c, best_gain, best_nl


def _rank_code(X: np.ndarray):
    n, p = X.shape
    codes = np.empty((n, p), dtype=np.int32)
    uniques = []
    for j in range(p):
        u, inv = np.unique(X[:, j], return_inverse=True)
        codes[:, j] = inv
        uniques.append(u)
    offsets = np.zeros(p + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(u) for u in uniques])
    return np.ascontiguousarray(codes), uniques, offsets


def _threshold(u: np.ndarray, c: int) -> float:
    mid = 0.5 * (u[c] + u[c + 1])
    # adjacent floats: the midpoint can round up onto the right value
    return float(mid) if mid < u[c + 1] else float(u[c])


def _fit_tree(codes, uniques, offsets, resid, hess, w, cfg: GbcConfig) -> tuple[Tree, np.ndarray]:
    feature, threshold, left, right, value, gain = [], [], [], [], [], []
    leaf_of = np.zeros(codes.shape[0], dtype=np.int64)

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0), (gain, 0.0)):
            lst.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(codes.shape[0], dtype=np.int64), 0)]
    while stack:
        node, rows, depth = stack.pop()
        split = None
        if depth < cfg.max_depth and rows.size >= cfg.min_samples_split:
            f, c, g, _ = _best_split(codes, rows, resid, w, offsets, int(offsets[-1]),
                                     cfg.min_samples_leaf)
            if f >= 0:
                split = (f, c, g)
        if split is None:
            num = float(np.sum(w[rows] * resid[rows]))
            den = float(np.sum(w[rows] * hess[rows]))
            value[node] = num / den if den > 1e-150 else 0.0
            leaf_of[rows] = node
            continue
        f, c, g = split
        mask = codes[rows, f] <= c
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node] = f, _threshold(uniques[f], c)
        left[node], right[node], gain[node] = lnode, rnode, g
        stack.append((rnode, rows[~mask], depth + 1))
        stack.append((lnode, rows[mask], depth + 1))
    tree = Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value), np.array(gain))
    return tree, leaf_of


def _deviance(y, F, w):
    return float(np.sum(w * (np.logaddexp(0.0, F) - y * F)) / np.sum(w))


def fit_gbc(X, y, sample_weight=None, config: GbcConfig | None = None) -> BoostedTrees:
    """Stagewise boosting of depth-limited trees on the deviance gradient.

    Trees are fit to the residual y - p by weighted least squares; leaf values
    take one Newton step sum(w*r) / sum(w*p*(1-p)). A single-class ``y`` yields
    a model that predicts the (clipped) prior.
    """
    cfg = config or GbcConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    prior = np.clip(np.sum(w * y) / np.sum(w), 1e-15, 1 - 1e-15)
    init = float(np.log(prior / (1 - prior)))
    model = BoostedTrees(init, [], cfg.learning_rate, p)
    F = np.full(n, init)
    model.train_deviance.append(_deviance(y, F, w))
    if y.min() == y.max():
        return model
    codes, uniques, offsets = _rank_code(X)
    for _ in range(cfg.n_estimators):
        prob = sigmoid(F)
        resid = y - prob
        hess = prob * (1.0 - prob)
        tree, leaf_of = _fit_tree(codes, uniques, offsets, resid, hess, w, cfg)
        F = F + cfg.learning_rate * tree.value[leaf_of]
        model.trees.append(tree)
        model.train_deviance.append(_deviance(y, F, w))
    return model


def gini_importance(model: BoostedTrees) -> np.ndarray:
    """Total weighted impurity decrease per feature, normalised to sum to 1."""
    imp = np.zeros(model.n_features)
    for t in model.trees:
        internal = t.feature >= 0
        np.add.at(imp, t.feature[internal], t.gain[internal])
    total = imp.sum()
    return imp / total if total > 0 else imp
