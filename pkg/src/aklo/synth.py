"""Two-dimensional synthetic task families with seeded reproducibility.

syn1: two clusters with different marginals and per-cluster linear
boundaries. syn2: one shared marginal, half the tasks labeled by a boundary
and half by its negation (adversarial transfer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import TaskStream
from .vectors import SparseVec

D1_MEAN = np.array([10.0, 10.0])
D1_SIGMA = 1.0
D2_MEAN = np.array([20.0, 5.0])
D2_SIGMA = 1.0


@dataclass
class SynSpec:
    kind: str  # "syn1" | "syn2"
    n_tasks: int = 50
    n_per_task: int = 100
    noise_var: float = 1e-3  # variance of the per-task boundary jitter
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("syn1", "syn2"):
            raise ValueError(f"kind must be syn1 or syn2, got {self.kind!r}")
        if self.n_tasks < 2 or self.n_tasks % 2:
            raise ValueError("n_tasks must be even and >= 2 (half per distribution)")


def _sign(v: np.ndarray) -> np.ndarray:
    # sign(0) resolves to +1 for determinism
    return np.where(v >= 0.0, 1, -1)


def _stream(X: np.ndarray, y: np.ndarray, name: str) -> TaskStream:
    examples = [(SparseVec.from_dense(row), int(lbl)) for row, lbl in zip(X, y)]
    return TaskStream(examples, dim=2, known_horizon=len(examples), name=name)


def _make_task_var(rng, mean, sigma, a_base, n, flip, name, eps) -> TaskStream:
    a = np.asarray(a_base, dtype=np.float64) + eps
    X = rng.normal(0.0, 1.0, size=(n, 2)) * sigma + mean
    score = X @ a
    y = _sign(-score if flip else score)
    return _stream(X, y, name)


def gen_syn1(spec: SynSpec, rng=None) -> list[TaskStream]:
    """Half the tasks from each cluster, interleaved by a seeded permutation."""
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    half = spec.n_tasks // 2
    tasks = []
    for j in range(half):
        tasks.append(
            _task_from_jitter(rng, D1_MEAN, D1_SIGMA, [-1.0, 1.0], spec, False, f"syn1-d1-{j:02d}")
        )
    for j in range(half):
        tasks.append(
            _task_from_jitter(rng, D2_MEAN, D2_SIGMA, [-0.25, 1.0], spec, False, f"syn1-d2-{j:02d}")
        )
    order = rng.permutation(spec.n_tasks)
    return [tasks[i] for i in order]


def gen_syn2(spec: SynSpec, rng=None) -> list[TaskStream]:
    """Shared marginal; the second half labels by the negated boundary."""
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    half = spec.n_tasks // 2
    tasks = []
    for j in range(half):
        tasks.append(
            _task_from_jitter(rng, D1_MEAN, D1_SIGMA, [-1.0, 1.0], spec, False, f"syn2-d1-{j:02d}")
        )
    for j in range(half):
        tasks.append(
            _task_from_jitter(rng, D1_MEAN, D1_SIGMA, [-1.0, 1.0], spec, True, f"syn2-d2-{j:02d}")
        )
    order = rng.permutation(spec.n_tasks)
    return [tasks[i] for i in order]


def _task_from_jitter(rng, mean, sigma, a_base, spec: SynSpec, flip: bool, name: str) -> TaskStream:
    eps = rng.normal(0.0, np.sqrt(spec.noise_var))
    return _make_task_var(rng, mean, sigma, a_base, spec.n_per_task, flip, name, eps)


def generate(spec: SynSpec) -> list[TaskStream]:
    if spec.kind == "syn1":
        return gen_syn1(spec)
    return gen_syn2(spec)
