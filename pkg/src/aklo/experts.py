"""Knowledge base of past-task models and the exponentially weighted
forecaster over them.

Weights are recomputed after every label from cumulative squared errors of
the truncated expert scores; predictions at step t therefore reflect losses
from steps 1..t-1 only.
"""

from __future__ import annotations

import math
import os
import struct

import numpy as np

from .learner import FrozenModel, truncate
from .schedules import MixSchedule
from .vectors import SparseVec, counter

KB_MAGIC = b"AKLOKB1\n"


class KbFormatError(ValueError):
    pass


class KnowledgeBase:
    """Ordered, append-only pool of frozen models from completed tasks."""

    def __init__(self, models=()) -> None:
        self.models: list[FrozenModel] = []
        self._matrix = None
        for m in models:
            self.append(m)

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    def __getitem__(self, i: int) -> FrozenModel:
        return self.models[i]

    def append(self, model: FrozenModel) -> None:
        if self.models and model.task_id <= self.models[-1].task_id:
            raise ValueError("task ids must be strictly increasing")
        self.models.append(model)
        self._matrix = None

    @property
    def dim(self) -> int:
        return max((m.dim for m in self.models), default=0)

    def matrix(self) -> np.ndarray:
        """Stacked model weights, shape (T, dim); shorter models zero-padded."""
        if self._matrix is None:
            d = self.dim
            M = np.zeros((len(self.models), d))
            for r, m in enumerate(self.models):
                M[r, : m.dim] = m.w
            self._matrix = M
        return self._matrix

    def scores(self, x: SparseVec) -> np.ndarray:
        """Raw inner products of every stored model with ``x``.

        Cost is proportional to T * nnz(x).
        """
        if not self.models:
            raise ValueError("knowledge base is empty")
        M = self.matrix()
        if x.dim > M.shape[1]:
            raise ValueError(f"sparse dim {x.dim} exceeds knowledge-base dim {M.shape[1]}")
        counter.touched += len(self.models) * (x.idx.size + 1)
        if x.idx.size == 0:
            return np.zeros(len(self.models))
        return M[:, x.idx] @ x.val

    def save(self, path) -> None:
        """Write the versioned binary container (bit-exact round trip)."""
        chunks = [KB_MAGIC, struct.pack("<q", len(self.models))]
        for m in self.models:
            # view as int64 so negative zero survives the round trip
            nz = np.nonzero(m.w.view(np.int64))[0]
            chunks.append(struct.pack("<qqq", m.task_id, m.dim, nz.size))
            rec = np.empty(nz.size, dtype=_ENTRY_DTYPE)
            rec["i"] = nz
            rec["v"] = m.w[nz]
            chunks.append(rec.tobytes())
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        with open(path, "rb") as fh:
            buf = fh.read()
        if len(buf) < len(KB_MAGIC) or buf[: len(KB_MAGIC) - 2] != KB_MAGIC[:-2]:
            raise KbFormatError(f"{path}: not a knowledge-base file")
        if buf[: len(KB_MAGIC)] != KB_MAGIC:
            raise KbFormatError(f"{path}: unsupported container version")
        off = len(KB_MAGIC)
        (count,) = struct.unpack_from("<q", buf, off)
        off += 8
        if count < 0:
            raise KbFormatError(f"{path}: negative model count")
        kb = cls()
        for _ in range(count):
            if off + 24 > len(buf):
                raise KbFormatError(f"{path}: truncated model header")
            task_id, dim, nnz = struct.unpack_from("<qqq", buf, off)
            off += 24
            if dim <= 0 or nnz < 0 or nnz > dim:
                raise KbFormatError(f"{path}: bad model header ({dim=}, {nnz=})")
            end = off + 16 * nnz
            if end > len(buf):
                raise KbFormatError(f"{path}: truncated model entries")
            rec = np.frombuffer(buf, dtype=_ENTRY_DTYPE, count=nnz, offset=off)
            off = end
            if nnz and (np.any(np.diff(rec["i"]) <= 0) or rec["i"][0] < 0 or rec["i"][-1] >= dim):
                raise KbFormatError(f"{path}: bad entry indices")
            w = np.zeros(dim)
            w[rec["i"]] = rec["v"]
            kb.append(FrozenModel(w, task_id))
        if off != len(buf):
            raise KbFormatError(f"{path}: {len(buf) - off} trailing bytes")
        return kb


_ENTRY_DTYPE = np.dtype([("i", "<i8"), ("v", "<f8")])


def expert_error(model: FrozenModel, x: SparseVec, y) -> float:
    """Squared error of the truncated expert score; always in [0, 4]."""
    if y not in (-1, 1):
        raise ValueError(f"label must be +1 or -1, got {y!r}")
    return (truncate(model.score(x)) - y) ** 2


def errors_from_scores(scores: np.ndarray, y: int) -> np.ndarray:
    return (np.clip(scores, -1.0, 1.0) - y) ** 2


def make_eps_fixed(n_experts: int, schedule: MixSchedule, horizon: int) -> float:
    """Constant learning rate sqrt(log T / (8 * sum of alpha)) for a known
    horizon."""
    if n_experts < 2:
        raise ValueError("need at least two experts")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s = schedule.prefix_sum(horizon)
    if s <= 0:
        raise ValueError("alpha sum must be positive")
    return math.sqrt(math.log(n_experts) / (8.0 * s))


def make_eps_double_trick(n_experts: int, schedule: MixSchedule, m: int) -> float:
    """Per-interval learning rate for the doubling restart scheme: interval
    I_m covers steps [2^m, 2^(m+1)-1] and uses the alpha sum over the first
    2^m steps."""
    if n_experts < 2:
        raise ValueError("need at least two experts")
    if m < 0:
        raise ValueError("interval index must be >= 0")
    s = schedule.prefix_sum(1 << m)
    if s <= 0:
        raise ValueError("alpha sum must be positive")
    return math.sqrt(math.log(n_experts) / (8.0 * s))


def _safe_eps(fn, *args) -> float:
    # Degenerate setups (single expert, all-zero alpha) never use the
    # weights for prediction; any positive value keeps the math defined.
    try:
        return fn(*args)
    except ValueError:
        return 1.0


class FixedEps:
    """Known-horizon rule: one epsilon for the whole task."""

    def __init__(self, n_experts: int, schedule: MixSchedule, horizon: int) -> None:
        self.eps = _safe_eps(make_eps_fixed, n_experts, schedule, horizon)

    def initial(self) -> float:
        return self.eps

    def on_step(self, state: "ExpertState") -> None:
        pass


class DoubleTrick:
    """Unknown-horizon rule: reset losses and refresh epsilon at every new
    interval boundary 2^m."""

    def __init__(self, n_experts: int, schedule: MixSchedule) -> None:
        self.n_experts = n_experts
        self.schedule = schedule
        self.m = 0

    def initial(self) -> float:
        return _safe_eps(make_eps_double_trick, self.n_experts, self.schedule, 0)

    def on_step(self, state: "ExpertState") -> None:
        t = state.t
        if t >= 2 and (t & (t - 1)) == 0:
            self.m = t.bit_length() - 1
            state.eps = _safe_eps(make_eps_double_trick, self.n_experts, self.schedule, self.m)
            state.reset_losses()


class ExpertState:
    """Cumulative squared errors and simplex weights over the knowledge base."""

    def __init__(self, n_experts: int, eps_rule) -> None:
        if n_experts < 1:
            raise ValueError("need at least one expert")
        self.n = n_experts
        self.L = np.zeros(n_experts)
        self.p = np.full(n_experts, 1.0 / n_experts)
        self.t = 1
        self.eps_rule = eps_rule
        self.eps = eps_rule.initial()
        self.reset_steps: list[int] = []

    def accumulate(self, kb: KnowledgeBase, x: SparseVec, y) -> None:
        """Fold one labeled example into the losses and reweight."""
        if len(kb) != self.n:
            raise ValueError(f"knowledge base size {len(kb)} != state size {self.n}")
        self.accumulate_scores(kb.scores(x), y)

    def accumulate_scores(self, scores: np.ndarray, y) -> None:
        if y not in (-1, 1):
            raise ValueError(f"label must be +1 or -1, got {y!r}")
        counter.touched += self.n
        self.L += errors_from_scores(scores, y)
        self._reweight()
        self.t += 1
        self.eps_rule.on_step(self)

    def reset_losses(self) -> None:
        self.L[:] = 0.0
        self.reset_steps.append(self.t)
        self._reweight()

    def _reweight(self) -> None:
        # shifted exponentials avoid underflow on long tasks
        z = np.exp(-self.eps * (self.L - self.L.min()))
        self.p = z / z.sum()


def mix_confidence(p: np.ndarray, scores: np.ndarray) -> float:
    """Weighted-vote confidence: truncation applied once, outside the sum."""
    return truncate(float(p @ scores))


def sample_index(p: np.ndarray, rng) -> int:
    """Inverse-CDF draw over the stored weight order; consumes exactly one
    uniform variate."""
    u = rng.random()
    i = int(np.searchsorted(np.cumsum(p), u, side="left"))
    return min(i, p.size - 1)


def sample_confidence(p: np.ndarray, scores: np.ndarray, rng) -> float:
    return truncate(float(scores[sample_index(p, rng)]))


def predict_sum(state: ExpertState, kb: KnowledgeBase, x: SparseVec) -> float:
    if len(kb) == 0:
        raise ValueError("knowledge base is empty")
    return mix_confidence(state.p, kb.scores(x))


def predict_sample(state: ExpertState, kb: KnowledgeBase, x: SparseVec, rng) -> float:
    if len(kb) == 0:
        raise ValueError("knowledge base is empty")
    return sample_confidence(state.p, kb.scores(x), rng)
