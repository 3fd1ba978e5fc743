"""Voxelwise encoding head: ReLU MLP from flat embedding to N voxel responses.

The network is a chain of affine layers with ReLU between hidden layers and a
plain affine readout. Forward and both gradient paths (w.r.t. the input and
w.r.t. the parameters under MSE) are written out explicitly so they can be
checked against finite differences; the ReLU subgradient at exactly 0 is 0.

Training uses mini-batch AdamW (beta1=0.9, beta2=0.999, eps=1e-8, decoupled
weight decay) with early stopping on mean voxelwise Pearson R over the
validation set, returning the best-metric checkpoint.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .embedding import Embedding

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


class ZeroVarianceWarning(UserWarning):
    """A voxel column had zero variance; its correlation / z-scores are set to 0."""


@dataclass(frozen=True)
class EncoderArchitecture:
    """Layer widths of the MLP head: input -> hidden... -> n_voxels."""

    input_len: int
    hidden: tuple[int, ...]
    n_voxels: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_len < 1 or self.n_voxels < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"all architecture widths must be >= 1, got {self}")

    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_len, *self.hidden, self.n_voxels]
        return list(zip(widths[:-1], widths[1:]))


class EncoderModel:
    """MLP parameters. weights[i] has shape (fan_in, fan_out); biases[i] (fan_out,)."""

    def __init__(self, arch: EncoderArchitecture, weights, biases):
        if len(weights) != len(arch.layer_dims()) or len(biases) != len(weights):
            raise ValueError("parameter count does not match architecture")
        self.arch = arch
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for (fin, fout), w, b in zip(arch.layer_dims(), self.weights, self.biases):
            if w.shape != (fin, fout) or b.shape != (fout,):
                raise ValueError(
                    f"parameter shape mismatch: expected W({fin},{fout}) b({fout},), "
                    f"got W{w.shape} b{b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("model parameters must be finite")

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )


def init_model(arch: EncoderArchitecture, seed: int) -> EncoderModel:
    """Seeded init: weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases 0."""
    rng = np.random.default_rng(seed)
    return _init_model_rng(arch, rng)


def _init_model_rng(arch: EncoderArchitecture, rng: np.random.Generator) -> EncoderModel:
    weights, biases = [], []
    for fin, fout in arch.layer_dims():
        bound = 1.0 / np.sqrt(fin)
        weights.append(rng.uniform(-bound, bound, size=(fin, fout)))
        biases.append(np.zeros(fout))
    return EncoderModel(arch, weights, biases)


def _as_input_matrix(model: EncoderModel, x) -> np.ndarray:
    if isinstance(x, Embedding):
        x = x.flat
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.arch.input_len:
        raise ValueError(
            f"input length mismatch: model expects {model.arch.input_len}, got {x.shape[-1]}"
        )
    return x


def _forward_cached(model: EncoderModel, x: np.ndarray):
    """Returns (output, layer inputs, hidden pre-activations)."""
    acts = [x]
    pres = []
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = h @ w + b
        pres.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    out = h @ model.weights[-1] + model.biases[-1]
    return out, acts, pres


def forward(model: EncoderModel, e) -> np.ndarray:
    """Predicted responses for one embedding (length N) or a batch (n, N)."""
    single = isinstance(e, Embedding) or np.asarray(e).ndim == 1
    x = _as_input_matrix(model, e)
    out, _, _ = _forward_cached(model, x)
    return out[0] if single else out


def input_gradient(model: EncoderModel, e, cotangent: np.ndarray) -> np.ndarray:
    """J^T @ cotangent where J = d(forward)/d(input); flat vector over input values."""
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (model.arch.n_voxels,):
        raise ValueError(
            f"cotangent length mismatch: expected {model.arch.n_voxels}, got {cot.shape}"
        )
    x = _as_input_matrix(model, e)
    if x.shape[0] != 1:
        raise ValueError("input_gradient takes a single embedding, not a batch")
    _, _, pres = _forward_cached(model, x)
    g = cot[None, :] @ model.weights[-1].T
    for w, z in zip(reversed(model.weights[:-1]), reversed(pres)):
        g = (g * (z > 0)) @ w.T
    return g[0]


def parameter_gradients(model: EncoderModel, x, targets):
    """Gradients of mean squared error over a batch.

    Loss is the mean over batch *and* voxels of (forward(q) - r)^2. Returns
    (weight grads, bias grads, loss).
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-D array")
    if targets.shape != (x.shape[0], model.arch.n_voxels):
        raise ValueError(
            f"target shape mismatch: expected {(x.shape[0], model.arch.n_voxels)}, "
            f"got {targets.shape}"
        )
    if x.shape[1] != model.arch.input_len:
        raise ValueError(
            f"input length mismatch: model expects {model.arch.input_len}, got {x.shape[1]}"
        )
    out, acts, pres = _forward_cached(model, x)
    diff = out - targets
    loss = float(np.mean(diff * diff))
    g = 2.0 * diff / diff.size
    grads_w = [np.empty(0)] * len(model.weights)
    grads_b = [np.empty(0)] * len(model.biases)
    grads_w[-1] = acts[-1].T @ g
    grads_b[-1] = g.sum(axis=0)
    gh = g @ model.weights[-1].T
    for i in range(len(model.weights) - 2, -1, -1):
        gz = gh * (pres[i] > 0)
        grads_w[i] = acts[i].T @ gz
        grads_b[i] = gz.sum(axis=0)
        gh = gz @ model.weights[i].T
    return grads_w, grads_b, loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    max_epochs: int = 50
    patience: int = 5
    batch_size: int = 32
    weight_decay: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError(f"patience, batch_size and max_epochs must be >= 1, got {self}")


@dataclass
class ResponseDataset:
    """Embeddings paired with (per-session z-scored) voxel responses."""

    embeddings: list[Embedding]
    responses: np.ndarray
    session_ids: np.ndarray

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=np.float64)
        self.session_ids = np.asarray(self.session_ids, dtype=np.int64)
        n = len(self.embeddings)
        if self.responses.ndim != 2 or self.responses.shape[0] != n:
            raise ValueError(
                f"responses must be (n_samples, n_voxels) with {n} rows, got {self.responses.shape}"
            )
        if self.session_ids.shape != (n,):
            raise ValueError("session_ids must have one entry per sample")

    @property
    def n_voxels(self) -> int:
        return self.responses.shape[1]

    def embedding_matrix(self) -> np.ndarray:
        return np.stack([e.flat for e in self.embeddings])


@dataclass
class TrainLog:
    """Per-epoch (train MSE, validation mean Pearson R), plus the chosen epoch."""

    epochs: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def as_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_mse,val_mean_r\n")
        for epoch, mse, r in self.epochs:
            buf.write(f"{epoch},{mse!r},{r!r}\n")
        return buf.getvalue()


def train(
    dataset_train: ResponseDataset,
    dataset_val: ResponseDataset,
    arch: EncoderArchitecture,
    cfg: TrainConfig,
):
    """Mini-batch AdamW on MSE with early stopping; returns (model, TrainLog).

    Deterministic for a fixed (seed, data, config, thread count): init and
    the per-epoch batch shuffle both come from one seeded generator. Stops
    once the validation metric has failed to improve for `patience`
    consecutive epochs and returns the checkpoint from the best epoch.
    """
    if len(dataset_train.embeddings) == 0 or len(dataset_val.embeddings) == 0:
        raise ValueError("train and validation datasets must be non-empty")
    if dataset_train.n_voxels != arch.n_voxels or dataset_val.n_voxels != arch.n_voxels:
        raise ValueError(
            f"dataset voxel count must match arch.n_voxels={arch.n_voxels}, "
            f"got train={dataset_train.n_voxels} val={dataset_val.n_voxels}"
        )
    rng = np.random.default_rng(cfg.seed)
    model = _init_model_rng(arch, rng)
    x_train = dataset_train.embedding_matrix()
    r_train = dataset_train.responses
    x_val = dataset_val.embedding_matrix()
    r_val = dataset_val.responses
    if x_train.shape[1] != arch.input_len:
        raise ValueError(
            f"dataset embedding length {x_train.shape[1]} does not match "
            f"arch.input_len={arch.input_len}"
        )

    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0

    log = TrainLog()
    best_metric = -np.inf
    best_params = None
    bad_epochs = 0
    n = x_train.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grads_w, grads_b, loss = parameter_gradients(model, x_train[idx], r_train[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch starting {start}"
                )
            step += 1
            c1 = 1.0 - ADAM_BETA1**step
            c2 = 1.0 - ADAM_BETA2**step
            for params, grads, ms, vs in (
                (model.weights, grads_w, m_w, v_w),
                (model.biases, grads_b, m_b, v_b),
            ):
                for i, g in enumerate(grads):
                    ms[i] = ADAM_BETA1 * ms[i] + (1.0 - ADAM_BETA1) * g
                    vs[i] = ADAM_BETA2 * vs[i] + (1.0 - ADAM_BETA2) * g * g
                    update = (ms[i] / c1) / (np.sqrt(vs[i] / c2) + ADAM_EPS)
                    params[i] -= cfg.learning_rate * (update + cfg.weight_decay * params[i])
            batch_losses.append(loss)

        val_pred = forward(model, x_val)
        val_r = float(np.mean(pearson_per_voxel(val_pred, r_val)))
        log.epochs.append((epoch, float(np.mean(batch_losses)), val_r))
        if not np.isfinite(val_r):
            raise TrainingDivergedError(f"non-finite validation metric at epoch {epoch}")

        if val_r > best_metric:
            best_metric = val_r
            best_params = ([w.copy() for w in model.weights], [b.copy() for b in model.biases])
            log.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                log.stopped_early = True
                break

    assert best_params is not None
    return EncoderModel(arch, best_params[0], best_params[1]), log


def pearson_per_voxel(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Columnwise Pearson correlation; zero-variance columns give 0 with a warning."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if pred.ndim != 2 or pred.shape[0] < 2:
        raise ValueError("need a 2-D (samples, voxels) array with at least 2 samples")
    pc = pred - pred.mean(axis=0)
    tc = truth - truth.mean(axis=0)
    num = (pc * tc).sum(axis=0)
    den = np.sqrt((pc * pc).sum(axis=0) * (tc * tc).sum(axis=0))
    degenerate = den == 0.0
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} voxel column(s) with zero variance; correlation set to 0",
            ZeroVarianceWarning,
            stacklevel=2,
        )
    r = np.zeros(pred.shape[1])
    np.divide(num, den, out=r, where=~degenerate)
    return r


def normalize_per_session(raw: np.ndarray, session_ids: np.ndarray) -> np.ndarray:
    """Z-score each (session, voxel) block with population sigma.

    Every session needs >= 2 samples; zero-variance blocks become zeros with
    a ZeroVarianceWarning instead of dividing by zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    session_ids = np.asarray(session_ids)
    if raw.ndim != 2 or session_ids.shape != (raw.shape[0],):
        raise ValueError("raw must be (samples, voxels) with one session id per row")
    sessions, counts = np.unique(session_ids, return_counts=True)
    for sid, count in zip(sessions, counts):
        if count < 2:
            raise ValueError(f"session {sid} has {count} sample(s); need >= 2")
    out = np.empty_like(raw)
    for sid in sessions:
        rows = session_ids == sid
        block = raw[rows]
        mu = block.mean(axis=0)
        sigma = block.std(axis=0)
        degenerate = sigma == 0.0
        if np.any(degenerate):
            warnings.warn(
                f"session {sid}: {int(degenerate.sum())} zero-variance voxel(s) set to 0",
                ZeroVarianceWarning,
                stacklevel=2,
            )
            sigma = np.where(degenerate, 1.0, sigma)
        out[rows] = np.where(degenerate, 0.0, (block - mu) / sigma)
    return out
