"""Quantile regression: pinball loss, a gradient-boosted tree regressor,
and the two naive baselines.

The regressor is a self-contained histogram GBT.  Each boosting round fits a
depth-limited tree to the pinball subgradient of the current predictions and
then replaces every leaf value with the alpha-quantile of the in-leaf
residuals, which is what makes the ensemble converge to the conditional
quantile rather than the conditional mean.  Targets can be trained on a
log1p scale; predictions are always returned on the linear scale, clamped
at zero.

Missing feature values (NaN) route through splits via a learned
default-direction flag, so "no history" is information, not an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Mapping, Optional, Sequence

import numpy as np

from plateopt.features import (
    CATEGORICAL_FEATURES,
    FEATURE_ORDER,
    FeatureRow,
    TrainingExample,
)
from plateopt.ingest import Dataset

NUMERIC_FEATURES = tuple(f for f in FEATURE_ORDER if f not in CATEGORICAL_FEATURES)

SERIALIZATION_FORMAT = "plateopt-gbt"
SERIALIZATION_VERSION = 1


def pinball(alpha: float, d: float, d_hat: float) -> float:
    """Pinball (quantile) loss; its minimizer is the alpha-quantile."""
    if d_hat <= d:
        return alpha * (d - d_hat)
    return (1.0 - alpha) * (d_hat - d)


def pinball_subgradient(alpha: float, d: float, d_hat: float) -> float:
    """Negative subgradient of the pinball loss wrt the prediction.

    alpha where the model underpredicts, alpha - 1 where it overpredicts;
    the kink (exact hit) takes the overprediction branch.
    """
    return alpha if d - d_hat > 0 else alpha - 1.0


def monotone_rearrange(preds: Mapping[float, float]) -> dict:
    """Repair quantile crossings: sorted values reassigned to sorted alphas.

    The multiset of predictions is preserved exactly.
    """
    if not preds:
        raise ValueError("need at least one prediction")
    alphas = sorted(preds)
    values = sorted(preds.values())
    return dict(zip(alphas, values))


@dataclass(frozen=True)
class GbtHyper:
    n_trees: int = 200
    max_depth: int = 6
    min_leaf: int = 20
    learning_rate: float = 0.1
    transform: str = "log1p"  # or "identity"
    max_bins: int = 64
    seed: int = 0
    exclude_features: tuple = ()

    def __post_init__(self):
        if self.transform not in ("log1p", "identity"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("n_trees, max_depth and min_leaf must be >= 1")


class FeatureEncoder:
    """FeatureRow -> numeric vector.  Categoricals one-hot on the levels seen
    at fit time (unseen levels encode to all-zeros), numerics pass through
    with NaN preserved as the missing marker."""

    def __init__(self, categories: dict, exclude: tuple = ()):
        self.categories = {k: tuple(v) for k, v in categories.items()}
        self.exclude = tuple(exclude)
        columns = []
        for name in FEATURE_ORDER:
            if name in self.exclude:
                continue
            if name in CATEGORICAL_FEATURES:
                for level in self.categories.get(name, ()):
                    columns.append(f"{name}={level}")
            else:
                columns.append(name)
        self.columns = tuple(columns)
        self._index = {c: i for i, c in enumerate(self.columns)}

    @classmethod
    def fit(cls, rows: Sequence[FeatureRow], exclude: tuple = ()) -> "FeatureEncoder":
        categories = {
            name: sorted({getattr(r, name) for r in rows})
            for name in CATEGORICAL_FEATURES if name not in exclude
        }
        return cls(categories, exclude)

    def encode_matrix(self, rows: Sequence[FeatureRow]) -> np.ndarray:
        X = np.empty((len(rows), len(self.columns)), dtype=np.float64)
        for i, row in enumerate(rows):
            X[i] = self.encode_row(row)
        return X

    def encode_row(self, row: FeatureRow) -> np.ndarray:
        out = np.zeros(len(self.columns), dtype=np.float64)
        for name in FEATURE_ORDER:
            if name in self.exclude:
                continue
            value = getattr(row, name)
            if name in CATEGORICAL_FEATURES:
                col = self._index.get(f"{name}={value}")
                if col is not None:
                    out[col] = 1.0
            else:
                out[self._index[name]] = value
        return out

    def to_dict(self) -> dict:
        return {"categories": {k: list(v) for k, v in sorted(self.categories.items())},
                "exclude": list(self.exclude)}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureEncoder":
        return cls(doc["categories"], tuple(doc["exclude"]))


class _Tree:
    """Flattened binary tree: feature < 0 marks a leaf."""

    __slots__ = ("feature", "threshold", "default_left", "left", "right", "value")

    def __init__(self, feature, threshold, default_left, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.default_left = np.asarray(default_left, dtype=bool)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            f = feat[idx]
            x = X[idx, f]
            thr = self.threshold[node[idx]]
            dleft = self.default_left[node[idx]]
            go_left = np.where(np.isnan(x), dleft, x <= thr)
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.value[node]

    def to_nested(self, columns) -> dict:
        def build(i):
            if self.feature[i] < 0:
                return {"value": float(self.value[i])}
            return {
                "feature": columns[self.feature[i]],
                "threshold": float(self.threshold[i]),
                "default_left": bool(self.default_left[i]),
                "left": build(self.left[i]),
                "right": build(self.right[i]),
            }
        return build(0)

    @classmethod
    def from_nested(cls, doc: dict, column_index: dict) -> "_Tree":
        feature, threshold, default_left, left, right, value = [], [], [], [], [], []

        def build(node) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            default_left.append(True)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "value" in node:
                value[i] = node["value"]
            else:
                feature[i] = column_index[node["feature"]]
                threshold[i] = node["threshold"]
                default_left[i] = node["default_left"]
                left[i] = build(node["left"])
                right[i] = build(node["right"])
            return i

        build(doc)
        return cls(feature, threshold, default_left, left, right, value)


def _bin_columns(X: np.ndarray, max_bins: int):
    """Per-column cut points and integer codes.

    Real values code to 0..len(cuts) via searchsorted(cuts, x, 'left'), so
    code <= b exactly when x <= cuts[b]; NaN codes to len(cuts)+1, one past
    every real bin.
    """
    n, p = X.shape
    cuts = []
    codes = np.zeros((n, p), dtype=np.int16)
    for j in range(p):
        col = X[:, j]
        finite = col[np.isfinite(col)]
        u = np.unique(finite)
        if u.size <= 1:
            c = np.empty(0, dtype=np.float64)
        elif u.size <= max_bins:
            c = (u[:-1] + u[1:]) / 2.0
        else:
            qs = np.quantile(finite, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
            c = np.unique(qs)
        cuts.append(c)
        code = np.searchsorted(c, col, side="left").astype(np.int16)
        code[np.isnan(col)] = len(c) + 1  # missing bucket, beyond the last bin
        codes[:, j] = code
    return cuts, codes


class _HistGrower:
    """Shared state for growing trees over one binned matrix.

    Histograms are (p, W) grids, one row per feature; a child node computes
    its histogram directly only when it is the smaller sibling, the other
    side comes from subtracting it off the parent (the standard histogram
    trick).  Split scans are vectorized over the whole grid.
    """

    def __init__(self, codes, cuts, min_leaf):
        self.codes = codes
        self.cuts = cuts
        self.min_leaf = min_leaf
        n, p = codes.shape
        self.p = p
        # widths[j]: real bins + 1 missing bucket; the missing code is nb
        self.widths = np.asarray([len(c) + 2 for c in cuts], dtype=np.int64)
        self.W = int(self.widths.max())
        self.offsets = np.arange(p, dtype=np.int64) * self.W
        cols = np.arange(p)
        # positions that are valid split points: b <= nb - 2
        self.valid = np.zeros((p, self.W), dtype=bool)
        for j in range(p):
            nb = self.widths[j] - 1
            if nb >= 2:
                self.valid[j, :nb - 1] = True
        self.miss_col = self.widths - 1
        self.cols = cols

    def hist(self, grad, idx):
        flat = (self.codes[idx].astype(np.int64) + self.offsets).ravel()
        weights = np.repeat(grad[idx], self.p)
        cnt = np.bincount(flat, minlength=self.p * self.W)
        sums = np.bincount(flat, weights=weights, minlength=self.p * self.W)
        return (cnt.reshape(self.p, self.W).astype(np.float64),
                sums.reshape(self.p, self.W))

    def best_split(self, cnt, sums, total_n, total_s):
        """Returns (feature, bin, missing_left) or None.

        Ties resolve to the smallest (feature, bin), missing-left first,
        matching a feature-ascending scan.
        """
        miss_n = cnt[self.cols, self.miss_col][:, None]
        miss_s = sums[self.cols, self.miss_col][:, None]
        cnt_real = cnt.copy()
        cnt_real[self.cols, self.miss_col] = 0.0
        sums_real = sums.copy()
        sums_real[self.cols, self.miss_col] = 0.0
        cl = np.cumsum(cnt_real, axis=1)
        sl = np.cumsum(sums_real, axis=1)
        parent = total_s * total_s / total_n
        best = None
        for missing_left in (True, False):
            nl = cl + miss_n if missing_left else cl
            slft = sl + miss_s if missing_left else sl
            nr = total_n - nl
            sr = total_s - slft
            ok = self.valid & (nl >= self.min_leaf) & (nr >= self.min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = np.where(ok, slft * slft / nl + sr * sr / nr, -np.inf)
            flat = int(np.argmax(gain))
            g = float(gain.ravel()[flat])
            if g - parent > 1e-12 and (best is None or g > best[0]):
                best = (g, flat // self.W, flat % self.W, missing_left)
        if best is None:
            return None
        return best[1], best[2], best[3]


def _grow_tree(codes, cuts, grad, resid, alpha, hyper, grower=None):
    """Returns (tree, training-row predictions)."""
    n, p = codes.shape
    if grower is None:
        grower = _HistGrower(codes, cuts, hyper.min_leaf)
    feature, threshold, default_left, left, right, value = [], [], [], [], [], []
    pred = np.zeros(n, dtype=np.float64)

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        default_left.append(True)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def make_leaf(i, idx):
        value[i] = float(np.quantile(resid[idx], alpha))
        pred[idx] = value[i]

    root = new_node()
    all_idx = np.arange(n)
    level = [(root, all_idx, None)]  # (node, rows, histogram or None)
    for depth in range(hyper.max_depth):
        next_level = []
        for i, idx, hist in level:
            if idx.size < 2 * hyper.min_leaf:
                make_leaf(i, idx)
                continue
            if hist is None:
                hist = grower.hist(grad, idx)
            cnt, sums = hist
            # every row appears exactly once in any one feature's histogram
            split = grower.best_split(cnt, sums, float(idx.size),
                                      float(sums[0].sum()))
            if split is None:
                make_leaf(i, idx)
                continue
            j, b, missing_left = split
            col = codes[idx, j]
            nb = grower.widths[j] - 1
            go_left = col <= b
            if missing_left:
                go_left = go_left | (col == nb)
            feature[i] = j
            threshold[i] = float(cuts[j][b])
            default_left[i] = missing_left
            li, ri = new_node(), new_node()
            left[i], right[i] = li, ri
            idx_l, idx_r = idx[go_left], idx[~go_left]
            if idx_l.size <= idx_r.size:
                small_idx, big_idx, small_first = idx_l, idx_r, True
            else:
                small_idx, big_idx, small_first = idx_r, idx_l, False
            if depth + 1 >= hyper.max_depth:
                hist_small = hist_big = None
            else:
                hist_small = grower.hist(grad, small_idx)
                hist_big = (cnt - hist_small[0], sums - hist_small[1])
            if small_first:
                next_level.append((li, small_idx, hist_small))
                next_level.append((ri, big_idx, hist_big))
            else:
                next_level.append((li, big_idx, hist_big))
                next_level.append((ri, small_idx, hist_small))
        level = next_level
    for i, idx, _ in level:
        make_leaf(i, idx)
    return _Tree(feature, threshold, default_left, left, right, value), pred


class GbtModel:
    """A trained quantile GBT: prediction is
    inverse_transform(base_score + lr * sum of leaf values), clamped at 0.

    ``trained_on`` records the (title, issue) keys behind the training rows
    so calibration can refuse a model that has seen its calibration set.
    """

    def __init__(self, alpha, learning_rate, base_score, transform,
                 encoder: FeatureEncoder, trees: Sequence[_Tree],
                 trained_on: frozenset = frozenset()):
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.base_score = base_score
        self.target_transform = transform
        self.encoder = encoder
        self.trees = list(trees)
        self.trained_on = frozenset(trained_on)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        raw = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            raw += self.learning_rate * tree.predict(X)
        if self.target_transform == "log1p":
            raw = np.expm1(raw)
        return np.maximum(raw, 0.0)

    def predict_rows(self, rows: Sequence[FeatureRow]) -> np.ndarray:
        return self.predict_matrix(self.encoder.encode_matrix(rows))

    def predict(self, row: FeatureRow) -> float:
        return float(self.predict_rows([row])[0])

    def to_json(self) -> str:
        doc = {
            "format": SERIALIZATION_FORMAT,
            "version": SERIALIZATION_VERSION,
            "alpha": self.alpha,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "target_transform": self.target_transform,
            "encoder": self.encoder.to_dict(),
            "trained_on": sorted(list(k) for k in self.trained_on),
            "trees": [t.to_nested(self.encoder.columns) for t in self.trees],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GbtModel":
        doc = json.loads(text)
        if doc.get("format") != SERIALIZATION_FORMAT:
            raise ValueError("not a serialized GBT model")
        if doc.get("version") != SERIALIZATION_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        encoder = FeatureEncoder.from_dict(doc["encoder"])
        column_index = {c: i for i, c in enumerate(encoder.columns)}
        trees = [_Tree.from_nested(t, column_index) for t in doc["trees"]]
        trained_on = frozenset(tuple(k) for k in doc.get("trained_on", []))
        return cls(doc["alpha"], doc["learning_rate"], doc["base_score"],
                   doc["target_transform"], encoder, trees, trained_on)


def fit_gbt(examples: Sequence[TrainingExample], alpha: float,
            hyper: GbtHyper = GbtHyper()) -> GbtModel:
    """Gradient boosting on the pinball loss of the (transformed) target."""
    if not examples:
        raise ValueError("training set is empty")
    if len(examples) < hyper.min_leaf:
        raise ValueError(
            f"training set has {len(examples)} rows, fewer than min_leaf={hyper.min_leaf}"
        )
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    encoder = FeatureEncoder.fit([e.features for e in examples],
                                 exclude=hyper.exclude_features)
    X = encoder.encode_matrix([e.features for e in examples])
    y = np.asarray([e.target for e in examples], dtype=np.float64)
    yt = np.log1p(y) if hyper.transform == "log1p" else y

    cuts, codes = _bin_columns(X, hyper.max_bins)
    base = float(np.quantile(yt, alpha))
    pred = np.full(yt.shape, base)
    trees = []
    grower = _HistGrower(codes, cuts, hyper.min_leaf)
    for _ in range(hyper.n_trees):
        resid = yt - pred
        grad = np.where(resid > 0, alpha, alpha - 1.0)
        tree, leaf_pred = _grow_tree(codes, cuts, grad, resid, alpha, hyper,
                                     grower=grower)
        trees.append(tree)
        pred += hyper.learning_rate * leaf_pred
    trained_on = frozenset((e.key[0], e.key[1]) for e in examples)
    return GbtModel(alpha, hyper.learning_rate, base, hyper.transform,
                    encoder, trees, trained_on)


@dataclass(frozen=True)
class BaselineModel:
    kind: str  # "naive" | "s_naive"

    def __post_init__(self):
        if self.kind not in ("naive", "s_naive"):
            raise ValueError(f"unknown baseline {self.kind!r}")


@dataclass(frozen=True)
class HistoryContext:
    """What a baseline is allowed to look at: one title's history at one POS
    strictly before as_of."""

    ds: Dataset
    title: str
    pos: str
    as_of: date
    target_start: Optional[date] = None


def _observed_history(ctx: HistoryContext):
    return [r for r in ctx.ds.history(ctx.title, ctx.pos)
            if r.period_end < ctx.as_of]


def _naive(ctx: HistoryContext) -> float:
    history = _observed_history(ctx)
    if not history:
        return 0.0
    return float(history[-1].sales)


def _s_naive(ctx: HistoryContext) -> float:
    history = _observed_history(ctx)
    anchor = (ctx.target_start or ctx.as_of) - timedelta(days=365)
    best, best_gap = None, None
    for r in history:
        gap = abs((r.period_start - anchor).days)
        if gap <= 45 and (best_gap is None or gap < best_gap):
            best, best_gap = r, gap
    if best is None:
        return _naive(ctx)
    return float(best.sales)


def predict(model, context) -> float:
    """Dispatch: GbtModel takes a FeatureRow, baselines a HistoryContext."""
    if isinstance(model, GbtModel):
        return model.predict(context)
    if isinstance(model, BaselineModel):
        fn = _naive if model.kind == "naive" else _s_naive
        return fn(context)
    raise TypeError(f"cannot predict with {type(model).__name__}")
