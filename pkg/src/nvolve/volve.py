"""Embedding-space optimization under a neural objective.

Runs bias-corrected Adam on q to minimize objective.loss(forward(model, q)),
recording a trajectory: loss and region means at every step, embeddings at
every `record_every`-th step (steps 0 and T always). Progress toward the
objective is measured on the best-so-far loss so that it is monotone even
when raw Adam losses oscillate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import Embedding
from .encoder import EncoderModel, forward, input_gradient
from .objective import NeuralObjective


class OptimizationDivergedError(RuntimeError):
    """Non-finite loss or gradient; carries the partial trajectory."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class OptimizeConfig:
    """Adam loop settings. beta1 = beta2 = 0 degenerates to per-coordinate
    sign steps of size learning_rate, the plain-gradient-descent-like mode."""

    steps: int = 300
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    record_every: int = 1
    seed: int = 0  # provenance of q0; the loop itself is deterministic

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def init_adam_state(n: int) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(
    state: AdamState, values: np.ndarray, grad: np.ndarray, cfg: OptimizeConfig
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; pure in (state, values, grad)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != values.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match values {values.shape}")
    if not np.all(np.isfinite(grad)):
        raise OptimizationDivergedError(f"non-finite gradient at adam step {state.t + 1}")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new_values = values - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return new_values, AdamState(m=m, v=v, t=t)


@dataclass(frozen=True)
class TrajectoryPoint:
    step: int
    loss: float
    region_means: dict[str, float]
    embedding: Embedding | None = None


@dataclass
class Trajectory:
    config: OptimizeConfig
    objective_text: str
    points: list[TrajectoryPoint]
    best_losses: np.ndarray = field(default=None)  # best loss seen up to each step

    def __post_init__(self):
        steps = [p.step for p in self.points]
        if not steps or steps[0] != 0:
            raise ValueError("trajectory must start at step 0")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("trajectory steps must be strictly increasing")
        losses = np.array([p.loss for p in self.points])
        if self.best_losses is None:
            self.best_losses = np.minimum.accumulate(losses)
        else:
            self.best_losses = np.asarray(self.best_losses, dtype=np.float64)
            if self.best_losses.shape != losses.shape:
                raise ValueError("best_losses must align with points")

    @property
    def final_step(self) -> int:
        return self.points[-1].step

    def point_at(self, step: int) -> TrajectoryPoint:
        for p in self.points:
            if p.step == step:
                return p
        raise KeyError(f"no point recorded at step {step}")

    def best_step(self) -> int:
        """Earliest step attaining the overall best loss."""
        return self.points[int(np.argmin([p.loss for p in self.points]))].step


def optimize(
    model: EncoderModel,
    obj: NeuralObjective,
    q0: Embedding,
    cfg: OptimizeConfig,
) -> Trajectory:
    """Run cfg.steps Adam updates from q0; deterministic for fixed inputs."""
    if obj.n_voxels != model.arch.n_voxels:
        raise ValueError(
            f"objective bound to {obj.n_voxels} voxels but model has {model.arch.n_voxels}"
        )
    if q0.shape.flat_len != model.arch.input_len:
        raise ValueError(
            f"embedding length {q0.shape.flat_len} does not match model input "
            f"{model.arch.input_len}"
        )
    regions = obj.region_names()
    masks = {t.region: m for t, m in zip(obj.terms, obj.masks)}

    points: list[TrajectoryPoint] = []
    values = q0.flat.copy()
    state = init_adam_state(values.size)

    def partial() -> Trajectory | None:
        return Trajectory(cfg, obj.text, points) if points else None

    for step in range(cfg.steps + 1):
        response = forward(model, values)
        loss = obj.loss(response)
        if not np.isfinite(loss):
            raise OptimizationDivergedError(
                f"non-finite loss at step {step}", trajectory=partial()
            )
        record_embedding = step % cfg.record_every == 0 or step == cfg.steps
        points.append(
            TrajectoryPoint(
                step=step,
                loss=loss,
                region_means={r: float(response[masks[r]].mean()) for r in regions},
                embedding=Embedding(q0.shape, values) if record_embedding else None,
            )
        )
        if step == cfg.steps:
            break
        grad = input_gradient(model, values, obj.cotangent(response))
        try:
            values, state = adam_step(state, values, grad, cfg)
        except OptimizationDivergedError as err:
            raise OptimizationDivergedError(str(err), trajectory=partial()) from None

    return Trajectory(config=cfg, objective_text=obj.text, points=points)


def progress(traj: Trajectory) -> np.ndarray:
    """p[t] = (L0 - best_t) / (L0 - best_T); all ones when nothing improved.

    Non-decreasing with p[final] == 1 exactly.
    """
    if not traj.points:
        raise ValueError("empty trajectory")
    l0 = traj.points[0].loss
    best = traj.best_losses
    total = l0 - best[-1]
    if total <= 0.0:
        return np.ones_like(best)
    return (l0 - best) / total


def sample_at_fractions(
    traj: Trajectory, fractions: list[float]
) -> list[tuple[float, int, Embedding]]:
    """For each fraction f in (0, 1], the earliest recorded step with progress >= f."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fractions must lie in (0, 1], got {f}")
    p = progress(traj)
    steps = [pt.step for pt in traj.points]
    out = []
    for f in fractions:
        i = int(np.searchsorted(p, f, side="left"))
        if i >= len(steps):  # guard; p[-1] == 1.0 makes this unreachable for f <= 1
            i = len(steps) - 1
        pt = traj.points[i]
        if pt.embedding is None:
            raise ValueError(
                f"no embedding recorded at step {pt.step} (fraction {f}); "
                f"re-run with --record-every 1"
            )
        out.append((f, pt.step, pt.embedding))
    return out
