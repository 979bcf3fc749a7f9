"""Frame-level feature predictor: two GRU layers and a tanh output layer.

The recurrence is h_n = H(c_{n-1}, h_{n-1}, m_n), c_hat_n = tanh(W h_n + b), with
pitch m_n concatenated to the previous cepstrum at the input of the first layer.
Gradients are computed by hand with truncated backpropagation through time.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from app.core.errors import DimensionError, EmptyStreamError, InputError, NumericError
from app.schemas.features import NB_CEPSTRUM, NB_FEATURES, NB_PITCH, FeatureFrame, FeatureStream
from app.schemas.predictor import (
    FeatureScaler,
    GruLayer,
    PredictorState,
    PredictorWeights,
    TrainConfig,
    TrainResult,
)

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
GRAD_CHECK_FRAMES = 10
# Blocks whose gradient norms fall below this are compared in absolute terms.
GRAD_CHECK_FLOOR = 1e-5
# tanh saturates to exactly 1.0 in float64; outputs stay below this magnitude.
OUTPUT_LIMIT = float(np.nextafter(1.0, 0.0))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _output(h2: np.ndarray, weights: PredictorWeights) -> np.ndarray:
    return np.clip(np.tanh(h2 @ weights.out_weight.T + weights.out_bias), -OUTPUT_LIMIT, OUTPUT_LIMIT)


def _float32_grid(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


# Scaling


def fit_scaler(corpus: Sequence[FeatureStream]) -> FeatureScaler:
    """Per-dimension min/max over the corpus mapped affinely onto [-1, 1]."""

    streams = [s for s in corpus if len(s)]
    if not streams:
        raise EmptyStreamError("cannot fit a scaler on an empty corpus")
    features = np.concatenate([s.features() for s in streams])
    lo, hi = features.min(axis=0), features.max(axis=0)
    degenerate = hi == lo
    offset = np.where(degenerate, -lo, -(hi + lo) / 2.0)
    gain = np.where(degenerate, 1.0, 2.0 / np.where(degenerate, 1.0, hi - lo))
    return FeatureScaler(offset=offset, gain=gain)


def _require_scaler(scaler: Optional[FeatureScaler]) -> FeatureScaler:
    if scaler is None:
        raise InputError("scaler has not been fitted")
    return scaler


def scale(frame: Union[FeatureFrame, np.ndarray], scaler: Optional[FeatureScaler]) -> np.ndarray:
    """Map raw 20-dim features (or a (..., 20) matrix) into [-1, 1], clamping out-of-range values."""

    scaler = _require_scaler(scaler)
    values = frame.features() if isinstance(frame, FeatureFrame) else np.asarray(frame, dtype=np.float64)
    if values.shape[-1] != NB_FEATURES:
        raise DimensionError(f"expected {NB_FEATURES} features, got {values.shape[-1]}")
    return np.clip(scaler.gain * (values + scaler.offset), -1.0, 1.0)


def scale_cepstrum(cepstrum: np.ndarray, scaler: Optional[FeatureScaler]) -> np.ndarray:
    scaler = _require_scaler(scaler)
    gain, offset = scaler.gain[:NB_CEPSTRUM], scaler.offset[:NB_CEPSTRUM]
    return np.clip(gain * (np.asarray(cepstrum, dtype=np.float64) + offset), -1.0, 1.0)


def scale_pitch(period, correlation, scaler: Optional[FeatureScaler]) -> np.ndarray:
    """Scaled (..., 2) pitch conditioning vector."""

    scaler = _require_scaler(scaler)
    pitch = np.stack([np.asarray(period, dtype=np.float64), np.asarray(correlation, dtype=np.float64)], axis=-1)
    return np.clip(scaler.gain[NB_CEPSTRUM:] * (pitch + scaler.offset[NB_CEPSTRUM:]), -1.0, 1.0)


def unscale(values: np.ndarray, scaler: Optional[FeatureScaler]) -> np.ndarray:
    """Inverse map for the 18 cepstral dimensions."""

    scaler = _require_scaler(scaler)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != NB_CEPSTRUM:
        raise DimensionError(f"expected {NB_CEPSTRUM} cepstral values, got {values.shape[-1]}")
    return values / scaler.gain[:NB_CEPSTRUM] - scaler.offset[:NB_CEPSTRUM]


# Model


def init_weights(
    scaler: FeatureScaler, gru1_units: int = 384, gru2_units: int = 128, seed: int = 1234
) -> PredictorWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization on the float32 grid."""

    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return _float32_grid(rng.uniform(-bound, bound, size=shape))

    def layer(inputs, units):
        return GruLayer(
            w_input=uniform((3 * units, inputs), units),
            w_recurrent=uniform((3 * units, units), units),
            bias=uniform((3 * units,), units),
        )

    return PredictorWeights(
        gru1=layer(NB_FEATURES, gru1_units),
        gru2=layer(gru1_units, gru2_units),
        out_weight=uniform((NB_CEPSTRUM, gru2_units), gru2_units),
        out_bias=uniform((NB_CEPSTRUM,), gru2_units),
        scaler=scaler,
    )


def count_parameters(weights: PredictorWeights) -> int:
    return int(sum(t.size for t in weights.tensors().values()))


@dataclass
class _GruCache:
    x: np.ndarray
    h: np.ndarray
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    rh: np.ndarray


def _gru_forward(layer: GruLayer, x: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, _GruCache]:
    units = layer.units
    gi = x @ layer.w_input.T + layer.bias
    gh = h @ layer.w_recurrent[: 2 * units].T
    r = _sigmoid(gi[:, :units] + gh[:, :units])
    z = _sigmoid(gi[:, units : 2 * units] + gh[:, units:])
    rh = r * h
    n = np.tanh(gi[:, 2 * units :] + rh @ layer.w_recurrent[2 * units :].T)
    h_next = (1.0 - z) * n + z * h
    return h_next, _GruCache(x, h, r, z, n, rh)


def _gru_backward(
    layer: GruLayer, cache: _GruCache, dh_next: np.ndarray, grads: Dict[str, np.ndarray], prefix: str
) -> Tuple[np.ndarray, np.ndarray]:
    units = layer.units
    x, h, r, z, n, rh = cache.x, cache.h, cache.r, cache.z, cache.n, cache.rh
    dh = dh_next * z
    da_n = dh_next * (1.0 - z) * (1.0 - n * n)
    dz = dh_next * (h - n)
    w_cand = layer.w_recurrent[2 * units :]
    drh = da_n @ w_cand
    dh += drh * r
    da_r = drh * h * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    da = np.concatenate([da_r, da_z, da_n], axis=1)

    grads[f"{prefix}.w_input"] += da.T @ x
    grads[f"{prefix}.bias"] += da.sum(axis=0)
    grads[f"{prefix}.w_recurrent"][: 2 * units] += da[:, : 2 * units].T @ h
    grads[f"{prefix}.w_recurrent"][2 * units :] += da_n.T @ rh

    dx = da @ layer.w_input
    dh += da[:, : 2 * units] @ layer.w_recurrent[: 2 * units]
    return dx, dh


def predict_step(
    weights: PredictorWeights, state: PredictorState, prev_frame: np.ndarray, pitch: np.ndarray
) -> Tuple[np.ndarray, PredictorState]:
    """One recurrence step on scaled inputs; 1-D inputs give a 1-D prediction."""

    prev_frame = np.asarray(prev_frame, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    single = prev_frame.ndim == 1
    prev_2d, pitch_2d = np.atleast_2d(prev_frame), np.atleast_2d(pitch)
    if prev_2d.shape[1] != NB_CEPSTRUM or pitch_2d.shape[1] != NB_PITCH:
        raise DimensionError("predict_step expects 18 cepstral and 2 pitch inputs")
    if state.h1.shape != (prev_2d.shape[0], weights.gru1.units) or state.h2.shape != (
        prev_2d.shape[0],
        weights.gru2.units,
    ):
        raise DimensionError("predictor state does not match the weights")
    x = np.concatenate([prev_2d, pitch_2d], axis=1)
    h1, _ = _gru_forward(weights.gru1, x, state.h1)
    h2, _ = _gru_forward(weights.gru2, h1, state.h2)
    prediction = _output(h2, weights)
    return (prediction[0] if single else prediction), PredictorState(h1, h2)


def sequence_gradients(
    weights: PredictorWeights,
    prev: np.ndarray,
    pitch: np.ndarray,
    targets: np.ndarray,
    mask: Optional[np.ndarray] = None,
    state: Optional[PredictorState] = None,
) -> Tuple[float, Dict[str, np.ndarray], PredictorState]:
    """Masked MSE over a (T, B, .) window and its BPTT gradients."""

    steps, batch = prev.shape[0], prev.shape[1]
    if mask is None:
        mask = np.ones((steps, batch))
    if state is None:
        state = PredictorState.zeros(weights, batch)
    count = float(mask.sum()) * NB_CEPSTRUM
    if count == 0.0:
        raise InputError("window has no valid frames")

    h1, h2 = state.h1, state.h2
    caches: List[Tuple[_GruCache, _GruCache, np.ndarray, np.ndarray]] = []
    loss = 0.0
    for t in range(steps):
        x = np.concatenate([prev[t], pitch[t]], axis=1)
        h1, c1 = _gru_forward(weights.gru1, x, h1)
        h2, c2 = _gru_forward(weights.gru2, h1, h2)
        y = _output(h2, weights)
        err = (y - targets[t]) * mask[t][:, None]
        loss += float(np.sum(err * err))
        caches.append((c1, c2, y, err))
    loss /= count

    grads = {name: np.zeros_like(tensor) for name, tensor in weights.tensors().items()}
    dh1_carry = np.zeros_like(h1)
    dh2_carry = np.zeros_like(h2)
    for t in reversed(range(steps)):
        c1, c2, y, err = caches[t]
        h2_t = (1.0 - c2.z) * c2.n + c2.z * c2.h
        da_out = (2.0 / count) * err * (1.0 - y * y)
        grads["out.weight"] += da_out.T @ h2_t
        grads["out.bias"] += da_out.sum(axis=0)
        dh2 = da_out @ weights.out_weight + dh2_carry
        dx2, dh2_carry = _gru_backward(weights.gru2, c2, dh2, grads, "gru2")
        _, dh1_carry = _gru_backward(weights.gru1, c1, dx2 + dh1_carry, grads, "gru1")
    return loss, grads, PredictorState(h1, h2)


# Training


def _training_sequences(
    corpus: Sequence[FeatureStream], scaler: FeatureScaler, conditioning: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]]
) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    sequences = []
    for i, stream in enumerate(corpus):
        if not len(stream):
            continue
        target = scale_cepstrum(stream.cepstrum, scaler)
        prev = np.vstack([np.zeros((1, NB_CEPSTRUM)), target[:-1]])
        if conditioning is not None:
            period, correlation = conditioning[i]
        else:
            period, correlation = stream.pitch_period, stream.pitch_correlation
        sequences.append((prev, scale_pitch(period, correlation, scaler), target))
    return sequences


class _Optimizer:
    def __init__(self, weights: PredictorWeights, config: TrainConfig) -> None:
        self.config = config
        self.step_count = 0
        self.first = {k: np.zeros_like(v) for k, v in weights.tensors().items()}
        self.second = {k: np.zeros_like(v) for k, v in weights.tensors().items()}

    def apply(self, weights: PredictorWeights, grads: Dict[str, np.ndarray]) -> float:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if not np.isfinite(norm):
            raise NumericError("non-finite gradient norm during predictor training")
        factor = min(1.0, self.config.clip_norm / norm) if norm > 0 else 1.0
        self.step_count += 1
        cfg = self.config
        for name, param in weights.tensors().items():
            g = grads[name] * factor
            if cfg.optimizer == "adam":
                self.first[name] = 0.9 * self.first[name] + 0.1 * g
                self.second[name] = 0.999 * self.second[name] + 0.001 * g * g
                m_hat = self.first[name] / (1.0 - 0.9**self.step_count)
                v_hat = self.second[name] / (1.0 - 0.999**self.step_count)
                param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
            else:
                self.first[name] = cfg.momentum * self.first[name] - cfg.learning_rate * g
                param += self.first[name]
        return norm


def train_predictor(
    corpus: Sequence[FeatureStream],
    config: TrainConfig,
    scaler: Optional[FeatureScaler],
    conditioning: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None,
    initial: Optional[PredictorWeights] = None,
) -> TrainResult:
    """Minimize MSE(c_n, c_hat_n) with truncated BPTT on noise-perturbed previous frames.

    ``conditioning`` optionally replaces each stream's pitch with the values the
    codec will actually feed the predictor (the dequantized packet pitch).
    """

    scaler = _require_scaler(scaler)
    sequences = _training_sequences(corpus, scaler, conditioning)
    if not sequences:
        raise EmptyStreamError("cannot train the predictor on an empty corpus")
    weights = initial.copy() if initial is not None else init_weights(
        scaler, config.gru1_units, config.gru2_units, config.seed
    )
    if config.epochs == 0:
        return TrainResult(weights=weights, epoch_losses=[])

    rng = np.random.default_rng(config.seed)
    optimizer = _Optimizer(weights, config)
    losses: List[float] = []
    window = config.truncation_length
    epochs = tqdm(range(config.epochs), desc="predictor", disable=not config.progress)
    for epoch in epochs:
        order = rng.permutation(len(sequences))
        total, weight_sum = 0.0, 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [sequences[i] for i in order[start : start + config.batch_size]]
            steps = max(seq[0].shape[0] for seq in batch)
            prev = np.zeros((steps, len(batch), NB_CEPSTRUM))
            pitch = np.zeros((steps, len(batch), NB_PITCH))
            target = np.zeros((steps, len(batch), NB_CEPSTRUM))
            mask = np.zeros((steps, len(batch)))
            for b, (p, m, t) in enumerate(batch):
                prev[: p.shape[0], b], pitch[: m.shape[0], b], target[: t.shape[0], b] = p, m, t
                mask[: p.shape[0], b] = 1.0
            if config.noise_std > 0:
                prev = prev + rng.normal(0.0, config.noise_std, size=prev.shape)

            state = PredictorState.zeros(weights, len(batch))
            for w0 in range(0, steps, window):
                sl = slice(w0, w0 + window)
                if mask[sl].sum() == 0:
                    break
                loss, grads, state = sequence_gradients(weights, prev[sl], pitch[sl], target[sl], mask[sl], state)
                if not np.isfinite(loss):
                    raise NumericError(f"NaN loss at epoch {epoch + 1}, window starting at frame {w0}")
                optimizer.apply(weights, grads)
                total += loss * mask[sl].sum()
                weight_sum += mask[sl].sum()
        epoch_loss = total / weight_sum
        losses.append(epoch_loss)
        logger.info("Predictor epoch %d/%d: loss %.6f", epoch + 1, config.epochs, epoch_loss)

    for tensor in weights.tensors().values():
        tensor[...] = _float32_grid(tensor)
    return TrainResult(weights=weights, epoch_losses=losses)


# Gradient check


@dataclass
class GradCheckReport:
    block_errors: Dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.block_errors.values())


def _sample_arrays(weights: PredictorWeights, sample: Union[FeatureStream, Tuple[np.ndarray, ...]]):
    if isinstance(sample, FeatureStream):
        stream = sample.slice(0, GRAD_CHECK_FRAMES)
        (prev, pitch, target), = _training_sequences([stream], weights.scaler, None)
    else:
        prev, pitch, target = (np.asarray(a, dtype=np.float64)[:GRAD_CHECK_FRAMES] for a in sample)
    return prev[:, None, :], pitch[:, None, :], target[:, None, :]


def grad_check(
    weights: PredictorWeights,
    sample: Union[FeatureStream, Tuple[np.ndarray, np.ndarray, np.ndarray]],
    entries_per_block: int = 24,
    seed: int = 0,
) -> GradCheckReport:
    """Compare BPTT gradients with central finite differences on up to 10 frames.

    ``sample`` is a feature stream (teacher-forced with the weights' scaler) or a
    tuple of scaled (prev cepstra, pitch, targets) arrays. The error per block is
    ||analytic - numeric|| / max(||analytic|| + ||numeric||, GRAD_CHECK_FLOOR) over
    sampled entries.
    """

    prev, pitch, target = _sample_arrays(weights, sample)
    work = weights.copy()
    _, analytic, _ = sequence_gradients(work, prev, pitch, target)
    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for name, tensor in work.tensors().items():
        flat = tensor.reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_block, flat.size), replace=False)
        numeric = np.zeros(picks.size)
        for j, idx in enumerate(picks):
            original = flat[idx]
            flat[idx] = original + FD_STEP
            plus, _, _ = sequence_gradients(work, prev, pitch, target)
            flat[idx] = original - FD_STEP
            minus, _, _ = sequence_gradients(work, prev, pitch, target)
            flat[idx] = original
            numeric[j] = (plus - minus) / (2.0 * FD_STEP)
        exact = analytic[name].reshape(-1)[picks]
        denom = max(np.linalg.norm(exact) + np.linalg.norm(numeric), GRAD_CHECK_FLOOR)
        errors[name] = float(np.linalg.norm(exact - numeric) / denom)
    logger.info("Gradient check max relative error %.3e", max(errors.values()))
    return GradCheckReport(block_errors=errors)
