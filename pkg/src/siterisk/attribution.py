"""Exact Shapley attributions for tree ensembles and their roll-up over feature groups.

Attributions live in margin (log-odds) space and use path-dependent
conditioning: a feature left out of a coalition is integrated over using the
training cover recorded at each split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .features import FeatureSchema, group_members
from .gbdt import Tree, TreeEnsemble
from .sectors import SECTOR_GROUP

MARGIN_SPACE = "log-odds"


class ModelIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class AttributionVector:
    per_feature: np.ndarray
    base_value: float
    margin_space: str = MARGIN_SPACE

    @property
    def output(self) -> float:
        return float(self.base_value + self.per_feature.sum())


@dataclass(frozen=True)
class GroupContribution:
    group_key: str
    level: str
    value: float


# -- TreeSHAP core (numba) --------------------------------------------------


@njit(cache=True)
def _extend(feat, zf, of, pw, base, depth, z, o, fi):
    feat[base + depth] = fi
    zf[base + depth] = z
    of[base + depth] = o
    pw[base + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[base + i + 1] += o * pw[base + i] * (i + 1) / (depth + 1)
        pw[base + i] = z * pw[base + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(feat, zf, of, pw, base, depth, k):
    o = of[base + k]
    z = zf[base + k]
    nxt = pw[base + depth]
    for i in range(depth - 1, -1, -1):
        if o != 0.0:
            tmp = pw[base + i]
            pw[base + i] = nxt * (depth + 1) / ((i + 1) * o)
            nxt = tmp - pw[base + i] * z * (depth - i) / (depth + 1)
        else:
            pw[base + i] = pw[base + i] * (depth + 1) / (z * (depth - i))
    for i in range(k, depth):
        feat[base + i] = feat[base + i + 1]
        zf[base + i] = zf[base + i + 1]
        of[base + i] = of[base + i + 1]


@njit(cache=True)
def _unwound_sum(zf, of, pw, base, depth, k):
    o = of[base + k]
    z = zf[base + k]
    nxt = pw[base + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if o != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * o)
            total += tmp
            nxt = pw[base + i] - tmp * z * (depth - i) / (depth + 1)
        elif z != 0.0:
            total += (pw[base + i] / z) / ((depth - i) / (depth + 1))
    return total


@njit(cache=True)
def _recurse(node, depth, parent_base, pz, po, pfi, x, feature, threshold, default_left, left, right, value, cover,
             feat, zf, of, pw, phi):
    base = parent_base + depth + 1
    for i in range(depth + 1):
        feat[base + i] = feat[parent_base + i]
        zf[base + i] = zf[parent_base + i]
        of[base + i] = of[parent_base + i]
        pw[base + i] = pw[parent_base + i]
    _extend(feat, zf, of, pw, base, depth, pz, po, pfi)

    f = feature[node]
    if f < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(zf, of, pw, base, depth, i)
            phi[feat[base + i]] += w * (of[base + i] - zf[base + i]) * value[node]
        return

    xv = x[f]
    if np.isnan(xv):
        go_left = default_left[node]
    else:
        go_left = xv < threshold[node]
    hot = left[node] if go_left else right[node]
    cold = right[node] if go_left else left[node]
    hot_z = cover[hot] / cover[node]
    cold_z = cover[cold] / cover[node]

    iz = 1.0
    io = 1.0
    k = 0
    while k <= depth:
        if feat[base + k] == f:
            break
        k += 1
    if k <= depth:
        iz = zf[base + k]
        io = of[base + k]
        _unwind(feat, zf, of, pw, base, depth, k)
        depth -= 1

    _recurse(hot, depth + 1, base, hot_z * iz, io, f, x, feature, threshold, default_left, left, right, value, cover,
             feat, zf, of, pw, phi)
    _recurse(cold, depth + 1, base, cold_z * iz, 0.0, f, x, feature, threshold, default_left, left, right, value, cover,
             feat, zf, of, pw, phi)


def _depth(tree: Tree) -> int:
    depth = np.zeros(tree.n_nodes, dtype=np.int64)
    for n in range(tree.n_nodes):
        if tree.feature[n] >= 0:
            depth[tree.left[n]] = depth[n] + 1
            depth[tree.right[n]] = depth[n] + 1
    return int(depth.max())


def _check_covers(tree: Tree) -> None:
    if np.any(tree.cover <= 0):
        raise ModelIntegrityError("tree has a node with zero cover; path-dependent attribution is undefined")


def expected_value(tree: Tree) -> float:
    """Cover-weighted mean leaf value: the tree's output with every feature unknown."""
    leaves = tree.feature < 0
    return float(np.sum(tree.cover[leaves] * tree.value[leaves]) / tree.cover[0])


def tree_shap_single(tree: Tree, X: np.ndarray, n_features: int) -> np.ndarray:
    """Per-row Shapley values of one tree, shape (n_rows, n_features)."""
    _check_covers(tree)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.zeros((len(X), n_features))
    if tree.n_nodes == 1:
        return out
    d = _depth(tree) + 2
    size = (d + 2) * (d + 3)
    feat = np.full(size, -1, dtype=np.int64)
    zf = np.zeros(size)
    of = np.zeros(size)
    pw = np.zeros(size)
    for r in range(len(X)):
        _recurse(0, 0, 0, 1.0, 1.0, -1, X[r], tree.feature, tree.threshold, tree.default_left, tree.left, tree.right,
                 tree.value, tree.cover, feat, zf, of, pw, out[r])
    return out


def tree_shap_matrix(ensemble: TreeEnsemble, X: np.ndarray) -> tuple[np.ndarray, float]:
    """Attributions for every row plus the shared base value."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n_features = max(ensemble.n_features, X.shape[1])
    phi = np.zeros((len(X), n_features))
    base = float(ensemble.base_margin)
    for tree in ensemble.active_trees:
        phi += tree_shap_single(tree, X, n_features)
        base += expected_value(tree)
    return phi, base


def tree_shap(ensemble: TreeEnsemble, vector) -> AttributionVector:
    ensemble.check_schema(vector.schema_hash)
    phi, base = tree_shap_matrix(ensemble, vector.values[None, :])
    return AttributionVector(phi[0], base)


# -- grouping ---------------------------------------------------------------


def group_index(schema: FeatureSchema) -> list[tuple[str, str, list[int]]]:
    """(group_key, level, feature indices) for every meta, category, technology and the sector block."""
    groups = []
    for c in schema.count_features:
        if c.kind == "meta":
            groups.append((c.key, "meta", group_members(schema, c.key)))
    for c in schema.count_features:
        if c.kind == "category":
            groups.append((c.key, "category", group_members(schema, c.key)))
    techs: dict[str, list[int]] = {}
    for i, b in enumerate(schema.binary_features):
        techs.setdefault(b.technology, []).append(i)
    for name in sorted(techs):
        groups.append((f"tech:{name}", "technology", techs[name]))
    if schema.sector_codes:
        sl = schema.sector_slice
        groups.append((SECTOR_GROUP, "sector", list(range(sl.start, sl.stop))))
    return groups


def membership_matrix(schema: FeatureSchema) -> tuple[list[str], list[str], np.ndarray]:
    groups = group_index(schema)
    M = np.zeros((schema.width, len(groups)))
    for j, (_, _, idx) in enumerate(groups):
        M[idx, j] = 1.0
    return [g[0] for g in groups], [g[1] for g in groups], M


def group_contributions(attr: AttributionVector, schema: FeatureSchema, taxonomy=None) -> list[GroupContribution]:
    """Signed per-sample group sums; each feature counts once per group containing it.

    ``taxonomy`` is accepted for symmetry with the schema builder; the schema
    already records which categories each group covers.
    """
    if len(attr.per_feature) != schema.width:
        raise ValueError(f"attribution width {len(attr.per_feature)} != schema width {schema.width}")
    return [
        GroupContribution(key, level, float(attr.per_feature[idx].sum()))
        for key, level, idx in group_index(schema)
    ]


def global_importance(values: np.ndarray, names: Sequence[str] | None = None) -> list[tuple[str, float, int]]:
    """Rank columns by mean |value| over samples; ties keep column order.

    For groups, pass per-sample signed group sums (so members that cancel
    within a sample cancel in the importance too).
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[0] < 1:
        raise ValueError("need at least one sample")
    names = list(names) if names is not None else [str(i) for i in range(values.shape[1])]
    mean_abs = np.abs(values).mean(axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    return [(names[j], float(mean_abs[j]), rank + 1) for rank, j in enumerate(order)]
