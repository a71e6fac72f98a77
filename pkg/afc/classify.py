"""
Classify module for the AFC pipeline.

Alarm-code classifiers trained on flattened alarm-only windows:
- KNN (brute-force Euclidean, k nearest)
- Decision tree (CART, Gini impurity)
- Random forest (bootstrap resampling + random feature subsets per split)
- Bagged selection: the model with the highest micro-averaged recall wins

Tie rules:
- KNN distance ties -> lower training-row index; vote ties -> lowest tag
- Tree splits: best Gini; ties -> first feature, then lowest threshold
- Leaf / forest vote ties -> lowest tag
- Model selection ties -> RF, then DT, then KNN

Author: AFC Development Team
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from artifacts import load_arrays, save_arrays
from errors import UsageError

logger = logging.getLogger(__name__)

MODEL_NAMES = ('KNN', 'DT', 'RF')
MODEL_PRIORITY = ('RF', 'DT', 'KNN')


@dataclass
class ClassifierParams:
    """Hyperparameters of the three classifiers."""

    k: int = 5
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    n_trees: int = 100
    max_features: str = "sqrt"  # "sqrt", "all" or an integer
    bootstrap: bool = True

    def validate(self) -> 'ClassifierParams':
        """
        Raises:
            UsageError: If any field is out of range
        """
        if self.k < 1:
            raise UsageError(f"KNN_K must be at least 1, got {self.k}")
        if self.max_depth is not None and self.max_depth < 1:
            raise UsageError(f"DT_MAX_DEPTH must be at least 1, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise UsageError(f"DT_MIN_SAMPLES_SPLIT must be at least 2, got {self.min_samples_split}")
        if self.n_trees < 1:
            raise UsageError(f"RF_N_TREES must be at least 1, got {self.n_trees}")
        self.features_per_split(1)
        return self

    def features_per_split(self, n_features: int) -> int:
        """Number of features drawn per split for a d-dimensional input."""
        value = str(self.max_features).strip().lower()
        if value == 'sqrt':
            return max(1, math.ceil(math.sqrt(n_features)))
        if value == 'all':
            return n_features
        try:
            count = int(value)
        except ValueError:
            raise UsageError(f"RF_MAX_FEATURES must be 'sqrt', 'all' or an integer, got '{self.max_features}'")
        if count < 1:
            raise UsageError(f"RF_MAX_FEATURES must be positive, got {count}")
        return min(count, n_features)


def _check_training(X: np.ndarray, tags: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    tags = np.asarray(tags, dtype=np.int64)
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    if X.ndim != 2:
        raise UsageError(f"Training windows must be 2-D (rows x features), got shape {X.shape}")
    if X.shape[0] == 0:
        raise UsageError("Classifier training set is empty")
    if tags.shape != (X.shape[0],):
        raise UsageError(f"Got {X.shape[0]} training rows but {len(tags)} tags")
    if np.any(tags < 1):
        raise UsageError("Alarm tags must be >= 1 (0 means no alarm)")
    return X, tags


def _check_queries(X: np.ndarray, n_features: int) -> Tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    elif X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise UsageError(f"Expected {n_features} features per window, got shape {X.shape}")
    return X, single


# ---------------------------------------------------------------------------
# KNN
# ---------------------------------------------------------------------------

@dataclass
class KnnModel:
    k: int
    X: np.ndarray
    tags: np.ndarray

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


def knn_fit(X: np.ndarray, tags: np.ndarray, k: int = 5) -> KnnModel:
    """
    Store the training windows.

    Raises:
        UsageError: Empty set, tags < 1, or k larger than the training set
    """
    X, tags = _check_training(X, tags)
    if k < 1 or k > X.shape[0]:
        raise UsageError(f"k={k} needs between 1 and {X.shape[0]} training rows")
    return KnnModel(k, X.copy(), tags.copy())


def _knn_one(model: KnnModel, query: np.ndarray) -> int:
    distances = np.sqrt(((model.X - query) ** 2).sum(axis=1))
    nearest = np.argsort(distances, kind='stable')[:model.k]
    votes = np.bincount(model.tags[nearest])
    return int(np.argmax(votes))


def knn_predict(model: KnnModel, windows: np.ndarray):
    """
    Majority tag of the k nearest training windows (Euclidean).

    Accepts one flattened window (returns an int) or a batch (returns an array).
    """
    X, single = _check_queries(windows, model.n_features)
    preds = np.array([_knn_one(model, q) for q in X], dtype=np.int64)
    return int(preds[0]) if single else preds


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------

@dataclass
class DecisionTree:
    """
    CART tree stored as flat node arrays.

    feature[n] == -1 marks a leaf. Samples with x[feature] <= threshold go left.
    counts[n] holds the training label distribution over classes.
    """

    classes: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    n_features: int
    max_depth: Optional[int] = None
    min_samples_split: int = 2

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depths = np.zeros(self.node_count, dtype=np.int64)
        for n in range(self.node_count):
            if self.feature[n] >= 0:
                depths[self.left[n]] = depths[n] + 1
                depths[self.right[n]] = depths[n] + 1
        return int(depths.max())

    def leaf_labels(self) -> np.ndarray:
        """Modal class per node (lowest tag on ties)."""
        return self.classes[np.argmax(self.counts, axis=1)]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of X."""
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[nodes] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            current = nodes[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            nodes[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[nodes] >= 0
        return nodes


def _best_split(X: np.ndarray, y_idx: np.ndarray, n_classes: int,
                features: np.ndarray) -> Optional[Tuple[int, float]]:
    """Lowest weighted Gini over (feature, midpoint) candidates; None when nothing splits."""
    n = len(y_idx)
    best: Optional[Tuple[int, float]] = None
    best_score = np.inf
    sizes_left = np.arange(1, n, dtype=float)
    sizes_right = n - sizes_left

    for j in features:
        order = np.argsort(X[:, j], kind='stable')
        xs = X[order, j]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue

        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y_idx[order]] = 1.0
        left = np.cumsum(onehot, axis=0)[:-1]
        right = left[-1] + onehot[-1] - left

        # n * weighted Gini = (nL - sum cL^2 / nL) + (nR - sum cR^2 / nR)
        score = (sizes_left - (left ** 2).sum(axis=1) / sizes_left) \
            + (sizes_right - (right ** 2).sum(axis=1) / sizes_right)
        score[~valid] = np.inf

        p = int(np.argmin(score))
        if score[p] < best_score:
            best_score = score[p]
            threshold = (xs[p] + xs[p + 1]) / 2.0
            if threshold >= xs[p + 1]:
                threshold = xs[p]
            best = (int(j), float(threshold))

    return best


def _grow_tree(
    X: np.ndarray,
    tags: np.ndarray,
    classes: np.ndarray,
    max_depth: Optional[int],
    min_samples_split: int,
    n_split_features: int,
    rng: Optional[np.random.Generator]
) -> DecisionTree:
    n_features = X.shape[1]
    n_classes = len(classes)
    y_idx = np.searchsorted(classes, tags)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    counts: List[np.ndarray] = []

    def new_node(rows: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y_idx[rows], minlength=n_classes))
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]

    while stack:
        node, rows, depth = stack.pop()
        if np.count_nonzero(counts[node]) <= 1:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if len(rows) < min_samples_split:
            continue

        if n_split_features >= n_features:
            candidates = np.arange(n_features)
        else:
            candidates = np.sort(rng.choice(n_features, size=n_split_features, replace=False))

        split = _best_split(X[rows], y_idx[rows], n_classes, candidates)
        if split is None:
            continue

        j, thr = split
        goes_left = X[rows, j] <= thr
        left_rows, right_rows = rows[goes_left], rows[~goes_left]
        feature[node] = j
        threshold[node] = thr
        left[node] = new_node(left_rows)
        right[node] = new_node(right_rows)
        # pop order: left subtree first
        stack.append((right[node], right_rows, depth + 1))
        stack.append((left[node], left_rows, depth + 1))

    return DecisionTree(
        classes=classes,
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.int64).reshape(len(feature), n_classes),
        n_features=n_features,
        max_depth=max_depth,
        min_samples_split=min_samples_split,
    )


def dt_fit(X: np.ndarray, tags: np.ndarray, params: Optional[ClassifierParams] = None) -> DecisionTree:
    """
    Fit a CART decision tree with Gini impurity over all features.

    Impure nodes are split whenever a valid split exists, so label-consistent
    data is fit perfectly at unlimited depth.

    Raises:
        UsageError: Empty training set or tags < 1
    """
    params = params or ClassifierParams()
    X, tags = _check_training(X, tags)
    classes = np.unique(tags)
    return _grow_tree(X, tags, classes, params.max_depth, params.min_samples_split, X.shape[1], None)


def dt_predict(tree: DecisionTree, windows: np.ndarray):
    """Modal training tag of the leaf each window lands in."""
    X, single = _check_queries(windows, tree.n_features)
    preds = tree.leaf_labels()[tree.apply(X)]
    return int(preds[0]) if single else preds.astype(np.int64)


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

@dataclass
class RandomForest:
    classes: np.ndarray
    trees: List[DecisionTree]
    seed: int
    bootstrap: bool = True
    max_features: str = "sqrt"
    n_features: int = 0

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _fit_forest_tree(X, tags, classes, params, n_split_features, seed_seq) -> DecisionTree:
    rng = np.random.default_rng(seed_seq)
    if params.bootstrap:
        rows = rng.integers(0, X.shape[0], size=X.shape[0])
    else:
        rows = np.arange(X.shape[0])
    return _grow_tree(X[rows], tags[rows], classes, params.max_depth, params.min_samples_split,
                      n_split_features, rng)


def rf_fit(X: np.ndarray, tags: np.ndarray, params: Optional[ClassifierParams] = None,
           seed: int = 42, jobs: int = 1) -> RandomForest:
    """
    Fit a random forest of CART trees.

    Each tree gets its own generator spawned from SeedSequence(seed), draws a
    bootstrap resample (same size, with replacement) and ceil(sqrt(d)) random
    features per split. Trees are fit with joblib; results do not depend on jobs.

    Raises:
        UsageError: Empty training set or tags < 1
    """
    params = params or ClassifierParams()
    X, tags = _check_training(X, tags)
    classes = np.unique(tags)
    n_split = params.features_per_split(X.shape[1])
    seeds = np.random.SeedSequence(seed).spawn(params.n_trees)

    trees = Parallel(n_jobs=jobs)(
        delayed(_fit_forest_tree)(X, tags, classes, params, n_split, s) for s in seeds
    )
    logger.debug(f"Random forest: {len(trees)} trees, {n_split}/{X.shape[1]} features per split")
    return RandomForest(classes, list(trees), seed, params.bootstrap, str(params.max_features), X.shape[1])


def rf_votes(forest: RandomForest, windows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-tag vote counts.

    Returns:
        tuple: (tags, counts) with counts of shape (queries, len(tags)); each
        row sums to n_trees
    """
    X, _ = _check_queries(windows, forest.n_features)
    counts = np.zeros((X.shape[0], len(forest.classes)), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in forest.trees:
        winners = np.argmax(tree.counts, axis=1)[tree.apply(X)]
        counts[rows, winners] += 1
    return forest.classes, counts


def rf_predict(forest: RandomForest, windows: np.ndarray):
    """Majority vote over trees (lowest tag on ties)."""
    _, single = _check_queries(windows, forest.n_features)
    tags, counts = rf_votes(forest, windows)
    preds = tags[np.argmax(counts, axis=1)]
    return int(preds[0]) if single else preds.astype(np.int64)


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

@dataclass
class EnsembleVerdict:
    predictions: Dict[str, np.ndarray]
    recalls: Dict[str, Optional[float]]
    chosen_model: str
    final_predictions: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def to_dict(self) -> dict:
        return {'chosen_model': self.chosen_model, 'recalls': dict(self.recalls)}


def bagged_select(per_model_predictions: Dict[str, Sequence[int]], true_tags: Sequence[int]) -> EnsembleVerdict:
    """
    Pick the classifier with the highest micro-averaged recall.

    Undefined recall (no instances) ranks below any defined value; ties go to
    RF, then DT, then KNN.

    Raises:
        UsageError: Unknown model name or prediction length mismatch
    """
    from evaluate import multiclass_micro

    truth = np.asarray(true_tags, dtype=np.int64)
    predictions: Dict[str, np.ndarray] = {}
    recalls: Dict[str, Optional[float]] = {}

    if not per_model_predictions:
        raise UsageError("bagged_select needs at least one model")
    for name, preds in per_model_predictions.items():
        if name not in MODEL_NAMES:
            raise UsageError(f"Unknown classifier '{name}' (expected one of {', '.join(MODEL_NAMES)})")
        preds = np.asarray(preds, dtype=np.int64)
        if preds.shape != truth.shape:
            raise UsageError(f"{name}: {len(preds)} predictions for {len(truth)} true tags")
        predictions[name] = preds
        recalls[name] = multiclass_micro(preds, truth).recall

    ranked = [name for name in MODEL_PRIORITY if name in predictions]
    best = max(-1.0 if recalls[n] is None else recalls[n] for n in ranked)
    chosen = next(n for n in ranked if (-1.0 if recalls[n] is None else recalls[n]) == best)

    return EnsembleVerdict(predictions, recalls, chosen, predictions[chosen])


def fit_all(X: np.ndarray, tags: np.ndarray, params: ClassifierParams, seed: int = 42,
            jobs: int = 1) -> Dict[str, object]:
    """
    Fit KNN, DT and RF on the same training windows.

    KNN's k is capped at the training size so small alarm sets still fit.
    """
    X, tags = _check_training(X, tags)
    k = min(params.k, X.shape[0])
    if k < params.k:
        logger.warning(f"Only {X.shape[0]} classifier training rows; KNN k lowered from {params.k} to {k}")
    logger.info(f"Fitting classifiers on {X.shape[0]} windows, {len(np.unique(tags))} alarm tags")
    return {
        'KNN': knn_fit(X, tags, k),
        'DT': dt_fit(X, tags, params),
        'RF': rf_fit(X, tags, params, seed=seed, jobs=jobs),
    }


def predict_all(models: Dict[str, object], X: np.ndarray) -> Dict[str, np.ndarray]:
    """Batch predictions of every fitted model (empty arrays for empty input)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        return {name: np.empty(0, dtype=np.int64) for name in models}

    predictors = {'KNN': knn_predict, 'DT': dt_predict, 'RF': rf_predict}
    return {name: np.asarray(predictors[name](model, X), dtype=np.int64).reshape(-1)
            for name, model in models.items()}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def _tree_arrays(tree: DecisionTree, prefix: str = '') -> Dict[str, np.ndarray]:
    return {
        f'{prefix}feature': tree.feature,
        f'{prefix}threshold': tree.threshold,
        f'{prefix}left': tree.left,
        f'{prefix}right': tree.right,
        f'{prefix}counts': tree.counts,
    }


def _tree_from_arrays(arrays: Dict[str, np.ndarray], classes: np.ndarray, n_features: int,
                      header: dict, prefix: str = '') -> DecisionTree:
    return DecisionTree(
        classes=classes,
        feature=arrays[f'{prefix}feature'],
        threshold=arrays[f'{prefix}threshold'],
        left=arrays[f'{prefix}left'],
        right=arrays[f'{prefix}right'],
        counts=arrays[f'{prefix}counts'].reshape(len(arrays[f'{prefix}feature']), len(classes)),
        n_features=n_features,
        max_depth=header.get('max_depth'),
        min_samples_split=header.get('min_samples_split', 2),
    )


def save_classifiers(models: Dict[str, object], directory: str) -> Dict[str, str]:
    """Write knn.npz, dt.npz and rf.npz; returns name -> path."""
    paths = {}
    if 'KNN' in models:
        knn = models['KNN']
        paths['KNN'] = save_arrays(os.path.join(directory, 'knn.npz'), 'knn', {'k': knn.k},
                                   {'X': knn.X, 'tags': knn.tags})
    if 'DT' in models:
        tree = models['DT']
        header = {'n_features': tree.n_features, 'max_depth': tree.max_depth,
                  'min_samples_split': tree.min_samples_split}
        arrays = _tree_arrays(tree)
        arrays['classes'] = tree.classes
        paths['DT'] = save_arrays(os.path.join(directory, 'dt.npz'), 'dt', header, arrays)
    if 'RF' in models:
        forest = models['RF']
        header = {
            'n_features': forest.n_features,
            'n_trees': forest.n_trees,
            'seed': forest.seed,
            'bootstrap': forest.bootstrap,
            'max_features': forest.max_features,
            'max_depth': forest.trees[0].max_depth if forest.trees else None,
            'min_samples_split': forest.trees[0].min_samples_split if forest.trees else 2,
        }
        arrays = {'classes': forest.classes}
        for n, tree in enumerate(forest.trees):
            arrays.update(_tree_arrays(tree, prefix=f'tree{n}_'))
        paths['RF'] = save_arrays(os.path.join(directory, 'rf.npz'), 'rf', header, arrays)
    return paths


def load_classifiers(directory: str) -> Dict[str, object]:
    """Load the three classifier artifacts written by save_classifiers."""
    models: Dict[str, object] = {}

    header, arrays = load_arrays(os.path.join(directory, 'knn.npz'), 'knn')
    models['KNN'] = KnnModel(header['k'], arrays['X'], arrays['tags'])

    header, arrays = load_arrays(os.path.join(directory, 'dt.npz'), 'dt')
    models['DT'] = _tree_from_arrays(arrays, arrays['classes'], header['n_features'], header)

    header, arrays = load_arrays(os.path.join(directory, 'rf.npz'), 'rf')
    trees = [
        _tree_from_arrays(arrays, arrays['classes'], header['n_features'], header, prefix=f'tree{n}_')
        for n in range(header['n_trees'])
    ]
    models['RF'] = RandomForest(arrays['classes'], trees, header['seed'], header['bootstrap'],
                                header['max_features'], header['n_features'])
    return models
