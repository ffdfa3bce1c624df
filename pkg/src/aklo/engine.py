"""Per-task interactive loop and the lifelong driver.

Each step predicts twice (current learner, knowledge base), blends the two
confidences through the mixing schedule, then updates the expert weights and
the learner on the revealed label. Finished tasks are frozen and appended to
the knowledge base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .data_io import TaskStream
from .experts import DoubleTrick, ExpertState, FixedEps, KnowledgeBase, mix_confidence, sample_confidence
from .learner import FrozenModel, OgdModel, check_label, truncate
from .schedules import MixSchedule


@dataclass(frozen=True)
class Policy:
    name: str
    uses_kb: bool
    weighted: bool  # accumulate losses and reweight (vs pinned uniform)
    sample: bool  # draw one expert instead of voting
    carry_learner: bool = False


POLICIES = {
    "itol": Policy("itol", uses_kb=False, weighted=False, sample=False),
    "tol": Policy("tol", uses_kb=False, weighted=False, sample=False, carry_learner=True),
    "unif-sum": Policy("unif-sum", uses_kb=True, weighted=False, sample=False),
    "unif-sample": Policy("unif-sample", uses_kb=True, weighted=False, sample=True),
    "aklo-sum": Policy("aklo-sum", uses_kb=True, weighted=True, sample=False),
    "aklo-sample": Policy("aklo-sample", uses_kb=True, weighted=True, sample=True),
}

POLICY_ORDER = tuple(POLICIES)


def get_policy(name: str) -> Policy:
    try:
        return POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r} (choose from {', '.join(POLICIES)})") from None


@dataclass
class HyperParams:
    """Learner and forecaster hyperparameters.

    ``lambda_mode="grid"`` uses the fixed ``lam`` everywhere;
    ``"theory"`` recomputes lambda per task from (X, R) and the task's
    horizon when known.
    """

    lam: float = 1.0
    lambda_mode: str = "grid"  # "grid" | "theory"
    R: float = 1.0
    X: float = 1.0
    eps_mode: str = "fixed"  # "fixed" | "double"

    def __post_init__(self) -> None:
        if self.lambda_mode not in ("grid", "theory"):
            raise ValueError(f"bad lambda_mode {self.lambda_mode!r}")
        if self.eps_mode not in ("fixed", "double"):
            raise ValueError(f"bad eps_mode {self.eps_mode!r}")
        if self.lambda_mode == "grid" and self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.R <= 0 or self.X <= 0:
            raise ValueError("R and X must be positive")

    def lambda_for(self, stream: TaskStream) -> float:
        if self.lambda_mode == "grid":
            return self.lam
        n = stream.known_horizon
        ratio = (self.X + self.R) / self.R
        if n is None:
            return ratio
        return ratio * math.sqrt((math.log(n) + 1.0) / n)

    def eps_rule_for(self, n_experts: int, schedule: MixSchedule, stream: TaskStream):
        if self.eps_mode == "double":
            return DoubleTrick(n_experts, schedule)
        horizon = stream.known_horizon if stream.known_horizon is not None else len(stream)
        return FixedEps(n_experts, schedule, horizon)


@dataclass
class StepRecord:
    t: int
    confidence_current: float
    confidence_kb: float
    alpha: float
    predicted_label: int
    true_label: int
    error_flag: bool


@dataclass
class TaskTrace:
    task_index: int
    name: str
    n_steps: int
    errors: int
    records: list[StepRecord] = field(default_factory=list)

    @property
    def error_rate(self) -> float:
        return self.errors / self.n_steps


def combine(conf_kb: float, conf_current: float, alpha: float) -> tuple[float, int]:
    """Blend the two confidences; the label is the sign with sign(0) = +1."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    score = alpha * conf_kb + (1.0 - alpha) * conf_current
    return score, (1 if score >= 0.0 else -1)


def run_task(
    policy: Policy,
    kb: KnowledgeBase,
    stream: TaskStream,
    schedule: MixSchedule,
    hp: HyperParams,
    rng=None,
    learner: OgdModel | None = None,
    task_id: int = 0,
) -> tuple[FrozenModel, list[StepRecord]]:
    """Play one task interactively and return the frozen final model.

    The knowledge base is consulted only for kb-using policies and only when
    it is nonempty; otherwise alpha is forced to 0 and the task degenerates
    to pure online learning. The learner updates on every step regardless of
    how much weight the schedule gave it.
    """
    if len(stream) == 0:
        raise ValueError("stream must be nonempty")
    if learner is None:
        learner = OgdModel(stream.dim, hp.lambda_for(stream))
    use_kb = policy.uses_kb and len(kb) > 0
    state = None
    if use_kb:
        state = ExpertState(len(kb), hp.eps_rule_for(len(kb), schedule, stream))
    if policy.sample and use_kb and rng is None:
        raise ValueError("sampling policies need a seeded rng")

    records: list[StepRecord] = []
    for t, (x, y) in enumerate(stream, start=1):
        y = check_label(y)
        raw = learner.raw_score(x)
        conf_cur = truncate(raw)
        if use_kb:
            scores = kb.scores(x)
            if policy.sample:
                conf_kb = sample_confidence(state.p, scores, rng)
            else:
                conf_kb = mix_confidence(state.p, scores)
            alpha = schedule.value(t)
        else:
            scores = None
            conf_kb = 0.0
            alpha = 0.0
        _, yhat = combine(conf_kb, conf_cur, alpha)
        records.append(StepRecord(t, conf_cur, conf_kb, alpha, yhat, y, yhat != y))
        if use_kb and policy.weighted:
            state.accumulate_scores(scores, y)
        learner.update(x, y, raw_score=raw)
    return learner.finalize(task_id), records


def run_lifelong(
    policy_name: str,
    tasks: list[TaskStream],
    schedule: MixSchedule,
    hp: HyperParams,
    rng=None,
    kb: KnowledgeBase | None = None,
) -> list[TaskTrace]:
    """Iterate the tasks in order, growing the knowledge base as they finish.

    ITOL restarts the learner per task and ignores the knowledge base; TOL
    carries one learner (and its step count) across every task.
    """
    if not tasks:
        raise ValueError("need at least one task")
    policy = get_policy(policy_name) if isinstance(policy_name, str) else policy_name
    kb = KnowledgeBase() if kb is None else kb
    next_id = kb.models[-1].task_id + 1 if len(kb) else 0
    dim = max(s.dim for s in tasks)
    learner = None
    traces = []
    for pos, stream in enumerate(tasks):
        if learner is None or not policy.carry_learner:
            learner = OgdModel(dim, hp.lambda_for(stream))
        frozen, records = run_task(
            policy, kb, stream, schedule, hp, rng=rng, learner=learner, task_id=next_id
        )
        errors = sum(r.error_flag for r in records)
        traces.append(TaskTrace(pos, stream.name, len(stream), errors, records))
        kb.append(frozen)
        next_id += 1
    return traces
