"""Gradient-boosted decision trees for binary classification.

Logistic loss, second-order (Newton) leaf weights, histogram split finding on
quantile bins computed once from the training rows, loss-guided growth up to
``max_leaves`` and early stopping on a validation set.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

# splits must beat this gain; filters float noise around zero-gain splits
MIN_SPLIT_GAIN = 1e-6
# early stopping "improvement" = validation loss drops by at least this much
MIN_IMPROVEMENT = 1e-7


class TrainingError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 0.1
    max_rounds: int = 1000
    grow_policy: str = "lossguide"
    max_leaves: int = 128
    max_bins: int = 32
    early_stopping_rounds: int = 50
    l2_leaf_penalty: float = 1.0
    min_child_weight: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_leaves < 2 or self.max_bins < 2:
            raise ValueError("max_leaves and max_bins must be >= 2")
        if self.l2_leaf_penalty < 0 or self.min_child_weight < 0:
            raise ValueError("penalties must be non-negative")
        if self.grow_policy != "lossguide":
            raise ValueError("only the lossguide grow policy is supported")
        if self.max_rounds < 1 or self.early_stopping_rounds < 1:
            raise ValueError("max_rounds and early_stopping_rounds must be >= 1")


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def logistic_grad_hess(margin, label):
    """Gradient and hessian of the log-loss with respect to the margin."""
    p = sigmoid(margin)
    return p - label, p * (1.0 - p)


def log_loss(y: np.ndarray, margin: np.ndarray) -> float:
    # log(1 + exp(-m)) for positives, log(1 + exp(m)) for negatives
    return float(np.mean(np.logaddexp(0.0, np.where(y > 0, -margin, margin))))


@dataclass
class Tree:
    """Flat binary tree; node 0 is the root, ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            x = X[active, self.feature[cur]]
            go_left = np.where(np.isnan(x), self.default_left[cur], x < self.threshold[cur])
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_doc(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf_weight": float(self.value[node]), "cover": float(self.cover[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "default_left": bool(self.default_left[node]),
            "cover": float(self.cover[node]),
            "left": self.to_doc(int(self.left[node])),
            "right": self.to_doc(int(self.right[node])),
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Tree":
        b = _TreeBuilder()

        def walk(d) -> int:
            if "leaf_weight" in d:
                return b.add_leaf(d["leaf_weight"], d["cover"])
            node = b.add_leaf(0.0, d.get("cover", 0.0))
            left, right = walk(d["left"]), walk(d["right"])
            b.make_split(node, d["feature"], d["threshold"], d.get("default_left", True), left, right)
            return node

        walk(doc)
        tree = b.build()
        # internal covers may be absent in hand-written files
        for n in range(tree.n_nodes - 1, -1, -1):
            if tree.feature[n] >= 0 and tree.cover[n] == 0:
                tree.cover[n] = tree.cover[tree.left[n]] + tree.cover[tree.right[n]]
        return tree


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.default_left = [], [], []
        self.left, self.right, self.value, self.cover = [], [], [], []

    def add_leaf(self, value: float, cover: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.default_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.cover.append(float(cover))
        return len(self.feature) - 1

    def make_split(self, node, feature, threshold, default_left, left, right):
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.default_left[node] = bool(default_left)
        self.left[node] = int(left)
        self.right[node] = int(right)
        self.value[node] = 0.0

    def build(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.default_left, dtype=bool),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=np.float64),
            np.array(self.cover, dtype=np.float64),
        )


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    base_margin: float
    best_round: int
    schema_hash: str
    params: TrainParams = field(default_factory=TrainParams)
    n_features: int = 0
    history: list[float] = field(default_factory=list, compare=False)

    @property
    def active_trees(self) -> list[Tree]:
        return self.trees[: self.best_round + 1]

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(len(X), self.base_margin)
        for tree in self.active_trees:
            out += tree.predict(X)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.margin(X))

    def check_schema(self, schema_hash: str) -> None:
        if schema_hash != self.schema_hash:
            raise SchemaMismatch(f"model schema {self.schema_hash} != input schema {schema_hash}")

    def to_doc(self) -> dict:
        return {
            "params": asdict(self.params),
            "base_margin": float(self.base_margin),
            "best_round": int(self.best_round),
            "schema_hash": self.schema_hash,
            "n_features": int(self.n_features),
            "trees": [t.to_doc() for t in self.trees],
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "TreeEnsemble":
        return cls(
            [Tree.from_doc(t) for t in doc["trees"]],
            float(doc["base_margin"]),
            int(doc["best_round"]),
            doc["schema_hash"],
            TrainParams(**doc.get("params", {})),
            int(doc.get("n_features", 0)),
        )


def save_model(model: TreeEnsemble, path: str | Path, manifest: Mapping | None = None) -> None:
    doc = model.to_doc()
    if manifest:
        doc = {"manifest": dict(manifest), **doc}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path: str | Path) -> TreeEnsemble:
    return TreeEnsemble.from_doc(json.loads(Path(path).read_text()))


def predict(model: TreeEnsemble, vector) -> float:
    """Probability for one FeatureVector."""
    model.check_schema(vector.schema_hash)
    return float(model.predict_proba(vector.values[None, :])[0])


# -- training ---------------------------------------------------------------


def quantile_cuts(column: np.ndarray, max_bins: int) -> np.ndarray:
    """Split candidates for one feature: rows with ``x < cut`` go left."""
    uniq = np.unique(column[~np.isnan(column)])
    if uniq.size <= max_bins:
        return uniq[1:]
    qs = np.quantile(column, np.linspace(0.0, 1.0, max_bins + 1)[1:-1], method="inverted_cdf")
    cuts = np.unique(qs)
    return cuts[cuts > uniq[0]]


class _Binned:
    def __init__(self, X: np.ndarray, max_bins: int):
        self.cuts = [quantile_cuts(X[:, j], max_bins) for j in range(X.shape[1])]
        self.n_bins = np.array([len(c) + 1 for c in self.cuts], dtype=np.int64)
        self.width = int(self.n_bins.max()) if len(self.n_bins) else 1
        self.codes = self.transform(X)
        self.offsets = np.arange(X.shape[1], dtype=np.int64) * self.width
        self.flat = self.codes + self.offsets[None, :]

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int64)
        for j, cuts in enumerate(self.cuts):
            out[:, j] = np.searchsorted(cuts, X[:, j], side="right")
        return out


class _Grower:
    def __init__(self, binned: _Binned, params: TrainParams):
        self.b = binned
        self.p = params
        n_feat = binned.codes.shape[1]
        self.size = n_feat * binned.width
        bins = np.arange(binned.width)
        # a split after bin k needs a non-empty right side: k < n_bins - 1
        self.valid = bins[None, :-1] < (binned.n_bins[:, None] - 1)

    def histogram(self, rows, g, h):
        flat = self.b.flat[rows].ravel()
        n_feat = self.b.codes.shape[1]
        gw = np.repeat(g[rows], n_feat)
        hw = np.repeat(h[rows], n_feat)
        shape = (n_feat, self.b.width)
        return (
            np.bincount(flat, weights=gw, minlength=self.size).reshape(shape),
            np.bincount(flat, weights=hw, minlength=self.size).reshape(shape),
        )

    def best_split(self, gh, hh, G, H):
        lam, mcw = self.p.l2_leaf_penalty, self.p.min_child_weight
        if gh.shape[0] == 0 or self.b.width < 2:
            return -np.inf, -1, -1
        GL = np.cumsum(gh, axis=1)[:, :-1]
        HL = np.cumsum(hh, axis=1)[:, :-1]
        GR, HR = G - GL, H - HL
        ok = self.valid & (HL >= mcw) & (HR >= mcw)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam))
        gain = np.where(ok, gain, -np.inf)
        # first maximum in row-major order = lowest feature, then lowest threshold
        flat = int(np.argmax(gain))
        f, k = divmod(flat, gain.shape[1])
        return float(gain[f, k]), f, k

    def grow(self, g: np.ndarray, h: np.ndarray):
        """Grow one tree; returns (tree, leaf value per training row)."""
        lr, lam = self.p.learning_rate, self.p.l2_leaf_penalty
        builder = _TreeBuilder()
        n = len(g)
        all_rows = np.arange(n)
        G, H = float(g.sum()), float(h.sum())
        root = builder.add_leaf(-G / (H + lam) * lr, H)
        info = {root: (all_rows, G, H)}
        gh, hh = self.histogram(all_rows, g, h)
        heap = []
        self._push(heap, root, gh, hh, G, H)
        n_leaves = 1
        while heap and n_leaves < self.p.max_leaves:
            neg_gain, node, f, k, gh, hh = heapq.heappop(heap)
            rows, G, H = info.pop(node)
            go_left = self.b.codes[rows, f] <= k
            lrows, rrows = rows[go_left], rows[~go_left]
            GL, HL = float(g[lrows].sum()), float(h[lrows].sum())
            GR, HR = float(g[rrows].sum()), float(h[rrows].sum())
            left = builder.add_leaf(-GL / (HL + lam) * lr, HL)
            right = builder.add_leaf(-GR / (HR + lam) * lr, HR)
            builder.make_split(node, f, self.b.cuts[f][k], True, left, right)
            builder.cover[node] = H
            info[left] = (lrows, GL, HL)
            info[right] = (rrows, GR, HR)
            n_leaves += 1
            # histogram subtraction: build the smaller child, derive the other
            if len(lrows) <= len(rrows):
                lg, lh = self.histogram(lrows, g, h)
                rg, rh = gh - lg, hh - lh
            else:
                rg, rh = self.histogram(rrows, g, h)
                lg, lh = gh - rg, hh - rh
            self._push(heap, left, lg, lh, GL, HL)
            self._push(heap, right, rg, rh, GR, HR)
        tree = builder.build()
        row_values = np.empty(n)
        for node, (rows, _, _) in info.items():
            row_values[rows] = tree.value[node]
        return tree, row_values

    def _push(self, heap, node, gh, hh, G, H):
        gain, f, k = self.best_split(gh, hh, G, H)
        if gain > MIN_SPLIT_GAIN:
            heapq.heappush(heap, (-gain, node, f, k, gh, hh))


def _as_xy(data):
    X = np.asarray(data.X, dtype=np.float64)
    y = np.asarray(data.y, dtype=np.float64)
    return X, y


def fit(
    X: np.ndarray,
    y: np.ndarray,
    params: TrainParams = TrainParams(),
    X_valid: np.ndarray | None = None,
    y_valid: np.ndarray | None = None,
    schema_hash: str = "",
) -> TreeEnsemble:
    """Boost trees on a dense matrix; early stopping needs a validation set."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError("X must be 2-D with one label per row")
    classes = set(np.unique(y).tolist())
    if not classes <= {0.0, 1.0}:
        raise TrainingError(f"labels must be 0/1, got {sorted(classes)}")
    if len(classes) < 2:
        raise TrainingError("training set contains a single class")

    prior = float(y.mean())
    base = float(np.log(prior / (1.0 - prior)))
    binned = _Binned(X, params.max_bins)
    grower = _Grower(binned, params)

    margin = np.full(len(y), base)
    has_valid = X_valid is not None
    if has_valid:
        X_valid = np.asarray(X_valid, dtype=np.float64)
        y_valid = np.asarray(y_valid, dtype=np.float64)
        vmargin = np.full(len(y_valid), base)

    trees: list[Tree] = []
    history: list[float] = []
    best, best_round, stale = np.inf, 0, 0
    for r in range(params.max_rounds):
        g, h = logistic_grad_hess(margin, y)
        tree, delta = grower.grow(g, h)
        trees.append(tree)
        margin += delta
        if not has_valid:
            best_round = r
            continue
        vmargin += tree.predict(X_valid)
        loss = log_loss(y_valid, vmargin)
        history.append(loss)
        if loss < best - MIN_IMPROVEMENT:
            best, best_round, stale = loss, r, 0
        else:
            stale += 1
            if stale >= params.early_stopping_rounds:
                logger.debug("early stop at round %d, best %d (%.6f)", r, best_round, best)
                break
    return TreeEnsemble(trees, base, best_round, schema_hash, params, X.shape[1], history)


def train(train_set, valid_set, params: TrainParams = TrainParams()) -> TreeEnsemble:
    """Train on a LabeledDataset with ``valid_set`` driving early stopping."""
    if valid_set is not None and valid_set.schema_hash != train_set.schema_hash:
        raise SchemaMismatch(f"train schema {train_set.schema_hash} != valid schema {valid_set.schema_hash}")
    X, y = _as_xy(train_set)
    Xv, yv = _as_xy(valid_set) if valid_set is not None else (None, None)
    return fit(X, y, params, Xv, yv, train_set.schema_hash)


# -- cross validation -------------------------------------------------------


@dataclass
class CvResult:
    fold_assignments: dict[str, int]
    fold_models: list[TreeEnsemble]
    oof_scores: dict[str, float]
    train_manifests: list[tuple[str, ...]]

    @property
    def k(self) -> int:
        return len(self.fold_models)


def stratified_folds(y: Sequence[int], k: int, rng_seed: int) -> np.ndarray:
    """Seeded stratified fold ids; overall and per-class fold sizes differ by <= 1."""
    y = np.asarray(y)
    for c in (0, 1):
        if np.sum(y == c) < k:
            raise TrainingError(f"class {c} has fewer than k={k} samples")
    rng = np.random.default_rng(rng_seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(y == 1)), rng.permutation(np.flatnonzero(y == 0))])
    folds = np.empty(len(y), dtype=np.int64)
    folds[order] = np.arange(len(y)) % k
    return folds


def kfold_cv(dataset, k: int = 5, params: TrainParams = TrainParams(), rng_seed: int = 0) -> CvResult:
    """Train one model per fold with the held-out fold for early stopping and scoring."""
    X, y = _as_xy(dataset)
    domains = list(dataset.domains)
    folds = stratified_folds(y.astype(int), k, rng_seed)
    models, manifests = [], []
    oof = np.empty(len(y))
    for i in range(k):
        tr, va = folds != i, folds == i
        model = fit(X[tr], y[tr], params, X[va], y[va], dataset.schema_hash)
        models.append(model)
        manifests.append(tuple(d for d, t in zip(domains, tr) if t))
        oof[va] = model.predict_proba(X[va])
    return CvResult(
        {d: int(f) for d, f in zip(domains, folds)},
        models,
        {d: float(s) for d, s in zip(domains, oof)},
        manifests,
    )


def ensemble_proba(models: Sequence[TreeEnsemble], X: np.ndarray) -> np.ndarray:
    """Mean of the fold models' probabilities."""
    return np.mean([m.predict_proba(X) for m in models], axis=0)
