"""
Regressor module for the AFC pipeline.

Multi-layer LSTM binary alarm forecaster written directly in numpy:
- Stacked LSTM layers (gate order i, f, c, o), every layer returns the full
  sequence, followed by a flatten + single-unit dense head with sigmoid
- Binary cross-entropy loss and analytic backpropagation through time
- Adam optimizer with global-norm gradient clipping
- Sequential training over the training turbines (ascending id order)

Layer parameter layout per layer: W (4h x d_in), U (4h x h), b (4h).
Parameter count per layer is 4 * ((d_in + h) * h + h); the head adds L*h + 1.

Author: AFC Development Team
"""

import copy
import logging
from dataclasses import dataclass, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from artifacts import config_hash, load_arrays, save_arrays
from errors import TrainingError, UsageError
from windowing import WindowedSet

logger = logging.getLogger(__name__)

DEFAULT_LAYER_WIDTHS = [512, 256, 128, 64, 32, 16]


@dataclass
class TrainConfig:
    """Optimizer and training-loop settings."""

    epochs_per_dataset: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    seed: int = 42
    decision_threshold: float = 0.5
    gradient_clip_norm: float = 1.0

    def validate(self) -> 'TrainConfig':
        """
        Raises:
            UsageError: If any field is out of range
        """
        if self.epochs_per_dataset < 1:
            raise UsageError(f"EPOCHS_PER_DATASET must be at least 1, got {self.epochs_per_dataset}")
        if self.learning_rate <= 0:
            raise UsageError(f"LEARNING_RATE must be positive, got {self.learning_rate}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise UsageError(f"BETA1/BETA2 must be in [0, 1), got {self.beta1}/{self.beta2}")
        if self.epsilon <= 0:
            raise UsageError(f"ADAM_EPSILON must be positive, got {self.epsilon}")
        if self.batch_size < 1:
            raise UsageError(f"BATCH_SIZE must be at least 1, got {self.batch_size}")
        check_threshold(self.decision_threshold)
        if self.gradient_clip_norm <= 0:
            raise UsageError(f"GRADIENT_CLIP_NORM must be positive, got {self.gradient_clip_norm}")
        return self


@dataclass
class LstmLayer:
    W: np.ndarray  # (4h, d_in)
    U: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h,)

    @property
    def units(self) -> int:
        return self.U.shape[1]


@dataclass
class LstmStack:
    """Stacked LSTM layers plus the dense sigmoid head."""

    layer_widths: List[int]
    L: int
    M: int
    layers: List[LstmLayer]
    dense_w: np.ndarray  # (L * h_last,)
    dense_b: np.ndarray  # (1,)

    def parameters(self) -> List[np.ndarray]:
        """All weight tensors in a fixed order (layers first, head last)."""
        params = []
        for layer in self.layers:
            params.extend([layer.W, layer.U, layer.b])
        params.extend([self.dense_w, self.dense_b])
        return params


@dataclass
class ForecastOutput:
    probabilities: np.ndarray
    binary: np.ndarray
    threshold: float = 0.5

    @property
    def P(self) -> int:
        return len(self.probabilities)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def check_threshold(threshold: float) -> float:
    if not 0.0 < threshold < 1.0:
        raise UsageError(f"Decision threshold must be strictly between 0 and 1, got {threshold}")
    return threshold


def layer_param_counts(layer_widths: Sequence[int], L: int, M: int) -> List[int]:
    """
    Per-layer parameter counts, dense head last.

    Example:
        widths [5, 3], L=3, M=4 -> [200, 108, 10]
    """
    counts = []
    d_in = M
    for h in layer_widths:
        counts.append(4 * ((d_in + h) * h + h))
        d_in = h
    counts.append(L * layer_widths[-1] + 1)
    return counts


def param_count(layer_widths: Sequence[int], L: int, M: int) -> int:
    """Closed-form parameter total (2,378,881 for the default stack at L=12, M=136)."""
    return sum(layer_param_counts(layer_widths, L, M))


def count_params(model: LstmStack) -> int:
    """Number of stored scalars in the model."""
    return int(sum(p.size for p in model.parameters()))


def _check_widths(layer_widths: Sequence[int]) -> None:
    if not layer_widths:
        raise UsageError("At least one LSTM layer is required")
    if any(int(h) <= 0 for h in layer_widths):
        raise UsageError(f"Layer widths must be positive, got {list(layer_widths)}")


def init_model(layer_widths: Sequence[int], L: int, M: int, seed: int) -> LstmStack:
    """
    Initialize an LSTM stack.

    Weights are uniform in +-1/sqrt(fan_in) per matrix; forget-gate biases
    start at 1, all other biases at 0.

    Args:
        layer_widths (list): Hidden units per layer, e.g. [512, 256, 128, 64, 32, 16]
        L (int): Window length (time steps)
        M (int): Features per step
        seed (int): Seed for numpy's default_rng

    Returns:
        LstmStack: Freshly initialized model

    Raises:
        UsageError: Non-positive width or dimension
    """
    _check_widths(layer_widths)
    if L < 1 or M < 1:
        raise UsageError(f"Window dimensions must be positive, got L={L}, M={M}")

    rng = np.random.default_rng(seed)
    layers = []
    d_in = M
    for h in layer_widths:
        h = int(h)
        W = rng.uniform(-1.0, 1.0, size=(4 * h, d_in)) / np.sqrt(d_in)
        U = rng.uniform(-1.0, 1.0, size=(4 * h, h)) / np.sqrt(h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        layers.append(LstmLayer(W, U, b))
        d_in = h

    fan_in = L * int(layer_widths[-1])
    dense_w = rng.uniform(-1.0, 1.0, size=fan_in) / np.sqrt(fan_in)
    return LstmStack([int(h) for h in layer_widths], L, M, layers, dense_w, np.zeros(1))


def _as_batch(model: LstmStack, x: Union[np.ndarray, WindowedSet]) -> Tuple[np.ndarray, bool]:
    if isinstance(x, WindowedSet):
        x = x.X
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[1:] != (model.L, model.M):
        raise UsageError(f"Expected windows of shape (L={model.L}, M={model.M}), got {x.shape}")
    return x, single


def _layer_forward(layer: LstmLayer, x: np.ndarray) -> Dict[str, np.ndarray]:
    """Run one layer over (B, L, d_in); returns the cache used by backprop."""
    B, L, _ = x.shape
    h = layer.units
    H = np.zeros((B, L, h))
    C = np.zeros((B, L, h))
    gates = np.zeros((B, L, 4 * h))

    h_prev = np.zeros((B, h))
    c_prev = np.zeros((B, h))
    x_proj = x @ layer.W.T + layer.b

    for t in range(L):
        z = x_proj[:, t] + h_prev @ layer.U.T
        i = sigmoid(z[:, :h])
        f = sigmoid(z[:, h:2 * h])
        g = np.tanh(z[:, 2 * h:3 * h])
        o = sigmoid(z[:, 3 * h:])
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)

        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        C[:, t] = c_prev
        H[:, t] = h_prev

    return {'x': x, 'H': H, 'C': C, 'gates': gates}


def _forward_logits(model: LstmStack, X: np.ndarray) -> Tuple[np.ndarray, List[Dict[str, np.ndarray]]]:
    caches = []
    seq = X
    for layer in model.layers:
        cache = _layer_forward(layer, seq)
        caches.append(cache)
        seq = cache['H']
    flat = seq.reshape(seq.shape[0], -1)
    logits = flat @ model.dense_w + model.dense_b[0]
    return logits, caches


def forward(model: LstmStack, x: Union[np.ndarray, WindowedSet]) -> Union[float, np.ndarray]:
    """
    Alarm probability for one window (L x M) or a batch (B x L x M).

    Raises:
        UsageError: Window dimensions do not match the model
    """
    X, single = _as_batch(model, x)
    logits, _ = _forward_logits(model, X)
    probs = sigmoid(logits)
    return float(probs[0]) if single else probs


def _layer_backward(layer: LstmLayer, cache: Dict[str, np.ndarray],
                    dH: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """BPTT through one layer given dLoss/dH for every step."""
    x, H, C, gates = cache['x'], cache['H'], cache['C'], cache['gates']
    B, L, _ = x.shape
    h = layer.units

    dW = np.zeros_like(layer.W)
    dU = np.zeros_like(layer.U)
    db = np.zeros_like(layer.b)
    dX = np.zeros_like(x)

    dh_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))

    for t in reversed(range(L)):
        i = gates[:, t, :h]
        f = gates[:, t, h:2 * h]
        g = gates[:, t, 2 * h:3 * h]
        o = gates[:, t, 3 * h:]
        c_prev = C[:, t - 1] if t > 0 else np.zeros((B, h))
        h_prev = H[:, t - 1] if t > 0 else np.zeros((B, h))
        tanh_c = np.tanh(C[:, t])

        dh = dH[:, t] + dh_next
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next

        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ], axis=1)

        dW += dz.T @ x[:, t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dX[:, t] = dz @ layer.W
        dh_next = dz @ layer.U
        dc_next = dc * f

    return dX, [dW, dU, db]


def loss_and_gradients(model: LstmStack, X: np.ndarray, y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """
    Mean binary cross-entropy over the batch and its gradients.

    Returns:
        tuple: (loss, gradients in model.parameters() order)
    """
    X, _ = _as_batch(model, X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != X.shape[0]:
        raise UsageError(f"Got {X.shape[0]} windows but {len(y)} targets")

    B = X.shape[0]
    logits, caches = _forward_logits(model, X)
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))

    dlogits = (sigmoid(logits) - y) / B
    flat = caches[-1]['H'].reshape(B, -1)
    d_dense_w = flat.T @ dlogits
    d_dense_b = np.array([dlogits.sum()])

    dH = (dlogits[:, np.newaxis] * model.dense_w[np.newaxis, :]).reshape(caches[-1]['H'].shape)
    layer_grads: List[List[np.ndarray]] = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        dH, grads = _layer_backward(layer, cache, dH)
        layer_grads.append(grads)

    gradients = []
    for grads in reversed(layer_grads):
        gradients.extend(grads)
    gradients.extend([d_dense_w, d_dense_b])
    return loss, gradients


class Adam:
    """
    Adam optimizer with global-norm gradient clipping.

    Updates parameter arrays in place:
        m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
        p -= lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(
        self,
        params: Sequence[np.ndarray],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        clip_norm: Optional[float] = 1.0
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def clip(self, grads: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], float]:
        """Scale gradients so their global L2 norm is at most clip_norm."""
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
            return [g * scale for g in grads], norm
        return list(grads), norm

    def step(self, grads: Sequence[np.ndarray]) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        grads, norm = self.clip(grads)
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t

        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)
        return norm


def train(
    model: LstmStack,
    datasets: Sequence[WindowedSet],
    cfg: TrainConfig
) -> Tuple[LstmStack, List[Dict]]:
    """
    Train sequentially over the training datasets, epochs_per_dataset each.

    The input model is left untouched; a trained copy is returned. Windows are
    shuffled every epoch with a generator seeded from cfg.seed.

    Args:
        model (LstmStack): Initial model
        datasets (list): Ordered training WindowedSets (one per turbine)
        cfg (TrainConfig): Optimizer settings

    Returns:
        tuple: (trained LstmStack, loss trace with one record per epoch)

    Raises:
        UsageError: Empty dataset list or window dimensions differ from the model
        TrainingError: Non-finite loss (reports epoch and batch)
    """
    cfg.validate()
    if not datasets:
        raise UsageError("train needs at least one training dataset")
    for ws in datasets:
        if (ws.spec.length, ws.spec.width) != (model.L, model.M):
            raise UsageError(
                f"{ws.turbine_id}: windows are {ws.spec.length}x{ws.spec.width}, model expects {model.L}x{model.M}"
            )

    model = copy.deepcopy(model)
    optimizer = Adam(
        model.parameters(),
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
        clip_norm=cfg.gradient_clip_norm,
    )
    rng = np.random.default_rng(cfg.seed)
    trace: List[Dict] = []
    epoch = 0

    for index, ws in enumerate(datasets):
        if ws.P == 0:
            logger.warning(f"{ws.turbine_id}: no windows, skipping")
            continue

        logger.info(f"Training on {ws.turbine_id} ({ws.P} windows, {cfg.epochs_per_dataset} epochs)")
        for dataset_epoch in range(1, cfg.epochs_per_dataset + 1):
            epoch += 1
            order = rng.permutation(ws.P)
            total = 0.0

            for batch, start in enumerate(range(0, ws.P, cfg.batch_size), start=1):
                rows = order[start:start + cfg.batch_size]
                loss, grads = loss_and_gradients(model, ws.X[rows], ws.y1[rows])
                if not np.isfinite(loss):
                    raise TrainingError(f"Non-finite loss on {ws.turbine_id}", epoch=epoch, batch=batch)
                optimizer.step(grads)
                total += loss * len(rows)

            mean_loss = total / ws.P
            trace.append({
                'epoch': epoch,
                'dataset': index,
                'turbine': ws.turbine_id,
                'dataset_epoch': dataset_epoch,
                'loss': mean_loss,
            })
            logger.debug(f"epoch {epoch} ({ws.turbine_id} {dataset_epoch}/{cfg.epochs_per_dataset}): loss {mean_loss:.6f}")

        logger.info(f"{ws.turbine_id}: final epoch loss {trace[-1]['loss']:.6f}")

    return model, trace


def gradient_check(model: LstmStack, x: np.ndarray, y: np.ndarray, epsilon: float = 1e-5) -> float:
    """
    Compare analytic BPTT gradients with central finite differences.

    Every parameter is perturbed, so only use this on tiny models.

    Returns:
        float: max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
    """
    _, analytic = loss_and_gradients(model, x, y)
    worst = 0.0

    for param, grad in zip(model.parameters(), analytic):
        grad_flat = grad.reshape(-1)
        for j in range(param.size):
            original = param.flat[j]
            param.flat[j] = original + epsilon
            plus, _ = loss_and_gradients(model, x, y)
            param.flat[j] = original - epsilon
            minus, _ = loss_and_gradients(model, x, y)
            param.flat[j] = original

            numeric = (plus - minus) / (2.0 * epsilon)
            denom = max(abs(grad_flat[j]), abs(numeric), 1e-12)
            worst = max(worst, abs(grad_flat[j] - numeric) / denom)

    return worst


def predict_binary(
    model: LstmStack,
    windows: Union[np.ndarray, WindowedSet],
    threshold: float = 0.5
) -> ForecastOutput:
    """
    Threshold alarm probabilities: binary = 1 where probability >= threshold.

    Raises:
        UsageError: Threshold outside (0, 1) or window dimensions mismatch
    """
    check_threshold(threshold)
    X, _ = _as_batch(model, windows)
    if X.shape[0] == 0:
        return ForecastOutput(np.empty(0), np.empty(0, dtype=np.int64), threshold)

    probs = forward(model, X)
    return ForecastOutput(probs, (probs >= threshold).astype(np.int64), threshold)


def depth_sweep(
    base_cfg: TrainConfig,
    stacks: Sequence[Sequence[int]],
    train_sets: Sequence[WindowedSet],
    eval_sets: Sequence[WindowedSet],
    score: Optional[Callable[[LstmStack], Dict[str, object]]] = None
) -> pd.DataFrame:
    """
    Train one model per layer stack on identical data and seed.

    Args:
        score: Optional hook called with each trained model; the keys of the
            dict it returns become extra columns (e.g. downstream final accuracy)

    Returns:
        pd.DataFrame: One row per stack with depth, widths, params, recall,
        precision, final_loss (recall is None when the evaluation set has no alarms)
    """
    from evaluate import binary_contingency, metrics

    if not stacks:
        raise UsageError("depth_sweep needs at least one layer stack")
    if not train_sets or not eval_sets:
        raise UsageError("depth_sweep needs training and evaluation windows")

    spec = train_sets[0].spec
    truth = np.concatenate([ws.y1 for ws in eval_sets])
    rows = []
    extra_columns: List[str] = []

    for widths in stacks:
        _check_widths(widths)
        model = init_model(widths, spec.length, spec.width, base_cfg.seed)
        model, trace = train(model, train_sets, base_cfg)
        pred = np.concatenate([
            predict_binary(model, ws, base_cfg.decision_threshold).binary for ws in eval_sets
        ])
        report = metrics(binary_contingency(pred, truth))
        rows.append({
            'depth': len(widths),
            'widths': ','.join(str(w) for w in widths),
            'params': count_params(model),
            'recall': report.recall,
            'precision': report.precision,
            'final_loss': trace[-1]['loss'] if trace else None,
        })
        if score is not None:
            extra = score(model)
            extra_columns.extend(k for k in extra if k not in extra_columns)
            rows[-1].update(extra)
        logger.info(f"depth {len(widths)} ({rows[-1]['widths']}): recall {report.recall}")

    columns = ['depth', 'widths', 'params', 'recall', 'precision', 'final_loss']
    return pd.DataFrame(rows, columns=columns + extra_columns)


def save_model(model: LstmStack, path: str, cfg: Optional[TrainConfig] = None,
               threshold: float = 0.5) -> str:
    """Write the model as a versioned npz (widths, L, M, weights, threshold, config hash)."""
    settings = asdict(cfg) if cfg is not None else {}
    header = {
        'layer_widths': model.layer_widths,
        'L': model.L,
        'M': model.M,
        'threshold': threshold,
        'config_hash': config_hash(settings),
        'train_config': settings,
    }
    arrays = {'dense_w': model.dense_w, 'dense_b': model.dense_b}
    for n, layer in enumerate(model.layers):
        arrays[f'layer{n}_W'] = layer.W
        arrays[f'layer{n}_U'] = layer.U
        arrays[f'layer{n}_b'] = layer.b
    return save_arrays(path, 'lstm', header, arrays)


def load_model(path: str) -> Tuple[LstmStack, Dict]:
    """
    Load a model written by save_model.

    Returns:
        tuple: (LstmStack, header dict with threshold and config hash)
    """
    header, arrays = load_arrays(path, 'lstm')
    layers = [
        LstmLayer(arrays[f'layer{n}_W'], arrays[f'layer{n}_U'], arrays[f'layer{n}_b'])
        for n in range(len(header['layer_widths']))
    ]
    model = LstmStack(list(header['layer_widths']), header['L'], header['M'], layers,
                      arrays['dense_w'], arrays['dense_b'])
    return model, header
