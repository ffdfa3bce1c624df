"""Current-task online classifier: truncated-confidence predictions and
regularized hinge-loss gradient descent updates."""

from __future__ import annotations

import numpy as np

from .vectors import ScaledDenseVec, SparseVec


def truncate(x: float, a: float = -1.0, b: float = 1.0) -> float:
    """Clamp ``x`` into [a, b]."""
    if a > b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if x <= a:
        return a
    if x >= b:
        return b
    return x


def check_label(y) -> int:
    if y == 1:
        return 1
    if y == -1:
        return -1
    raise ValueError(f"label must be +1 or -1, got {y!r}")


class FrozenModel:
    """Immutable snapshot of a finished task's classifier."""

    __slots__ = ("w", "task_id")

    def __init__(self, w, task_id: int) -> None:
        w = np.array(w, dtype=np.float64)
        w.setflags(write=False)
        self.w = w
        self.task_id = int(task_id)

    @property
    def dim(self) -> int:
        return self.w.size

    def score(self, x: SparseVec) -> float:
        if x.dim > self.w.size:
            raise ValueError(f"sparse dim {x.dim} exceeds model dim {self.w.size}")
        if x.idx.size == 0:
            return 0.0
        return float(self.w[x.idx] @ x.val)

    def confidence(self, x: SparseVec) -> float:
        return truncate(self.score(x))

    def norm(self) -> float:
        return float(np.linalg.norm(self.w))


class OgdModel:
    """Online gradient descent on hinge loss with L2 shrinkage.

    The step size is eta_t = 1/(lambda*t). On margin >= 1 only the shrink
    (1 - eta_t*lambda) applies; otherwise eta_t*y*x is added as well. The
    lazy scale in the weight carrier makes the shrink O(1), so one update
    costs O(nnz(x)).
    """

    def __init__(self, dim: int, lam: float) -> None:
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.w = ScaledDenseVec(dim)
        self.lam = float(lam)
        self.t = 1

    def eta(self) -> float:
        return 1.0 / (self.lam * self.t)

    def raw_score(self, x: SparseVec) -> float:
        return self.w.dot(x)

    def predict_confidence(self, x: SparseVec) -> float:
        return truncate(self.w.dot(x))

    def hinge_loss(self, x: SparseVec, y) -> float:
        y = check_label(y)
        return max(0.0, 1.0 - y * self.w.dot(x))

    def update(self, x: SparseVec, y, raw_score: float | None = None) -> None:
        """One interactive step after the true label arrives.

        ``raw_score`` may pass in an already-computed <w_t, x> to avoid
        recomputing the dot product.
        """
        y = check_label(y)
        if raw_score is None:
            raw_score = self.w.dot(x)
        eta = 1.0 / (self.lam * self.t)
        self.w.scale_in_place(1.0 - eta * self.lam)
        if y * raw_score < 1.0:
            self.w.axpy_sparse(eta * y, x)
        self.t += 1

    def finalize(self, task_id: int = 0) -> FrozenModel:
        """Snapshot the final iterate for the knowledge base."""
        return FrozenModel(self.w.to_dense(), task_id)
