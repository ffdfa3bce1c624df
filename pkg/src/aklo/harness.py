"""Experiment orchestration: repetitions with reshuffling, ACE aggregation,
lambda grid selection, comparator oracles and numerical bound evaluation.

All randomness is derived from one master seed through fixed entropy tags,
so reports are bit-reproducible regardless of worker count.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data_io import TaskStream, load_manifest_tasks, shuffle_stream, subsample
from .engine import POLICY_ORDER, HyperParams, TaskTrace, get_policy, run_lifelong
from .experts import KnowledgeBase
from .schedules import ConstantMix, LinearMix, MixSchedule, corollary1_threshold, from_spec
from .synth import SynSpec, generate

log = logging.getLogger("aklo.harness")

LAMBDA_GRID = tuple(10.0**k for k in range(-3, 4))

# entropy tags for independent rng streams off the master seed
_TAG_SHUFFLE = 0x5277
_TAG_POLICY = 0x9013
_TAG_LAMBDA = 0x1A3B
_TAG_ORACLE = 0x0C1E


def rng_for(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def load_dataset(dataset: str, seed: int) -> list[TaskStream]:
    """``syn1``/``syn2`` generate from the seed; anything else is a manifest
    path (whose own seed drives subsampling)."""
    if dataset in ("syn1", "syn2"):
        return generate(SynSpec(dataset, seed=seed))
    return load_manifest_tasks(dataset)


def make_schedule(spec: str, stream: TaskStream) -> MixSchedule:
    horizon = stream.known_horizon if stream.known_horizon is not None else len(stream)
    return from_spec(spec, horizon=horizon)


def ace(traces: list[TaskTrace]) -> float:
    """Mean over tasks of the per-task online mistake rate."""
    if not traces:
        raise ValueError("need at least one task trace")
    return float(np.mean([t.error_rate for t in traces]))


def select_lambda(
    tasks: list[TaskStream],
    grid=LAMBDA_GRID,
    seed: int = 0,
    frac: float = 0.2,
) -> float:
    """Pick the grid value minimizing mean ITOL error on a seeded validation
    sample of each task (ties go to the earliest grid entry)."""
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    rng = rng_for(seed, _TAG_LAMBDA)
    val = [subsample(s, max(1, round(frac * len(s))), rng) for s in tasks]
    sched = ConstantMix(0.0)
    best_lam, best_ace = None, math.inf
    for lam in grid:
        score = ace(run_lifelong("itol", val, sched, HyperParams(lam=lam)))
        if score < best_ace:
            best_lam, best_ace = lam, score
    return best_lam


def estimate_x(tasks: list[TaskStream]) -> float:
    x = max(s.max_example_norm() for s in tasks)
    return x if x > 0 else 1.0


def estimate_r(tasks: list[TaskStream], lam: float, schedule_spec: str = "linear") -> float:
    """2x the largest independently trained task model norm, floored at 1."""
    traces_kb = KnowledgeBase()
    run_lifelong(
        "itol",
        tasks,
        lambda s: make_schedule(schedule_spec, s),
        HyperParams(lam=lam),
        kb=traces_kb,
    )
    top = max(m.norm() for m in traces_kb)
    return max(1.0, 2.0 * top)


# ---------------------------------------------------------------------------
# comparator oracles
# ---------------------------------------------------------------------------


def comparator_wstar(
    stream: TaskStream,
    R: float,
    seed: int = 0,
    passes: int = 500,
    restarts: int = 5,
) -> np.ndarray:
    """Approximate minimizer of cumulative hinge loss over the R-ball.

    Projected subgradient descent on the mean hinge with step c/sqrt(iter),
    taking the best iterate over the given number of random restarts. This
    is the offline brute-force oracle, not a streaming component.
    """
    X = stream.dense_matrix()
    y = stream.labels()
    n, d = X.shape
    if R <= 0.0:
        return np.zeros(d)
    xmax = float(np.max(np.linalg.norm(X, axis=1)))
    if xmax == 0.0:
        return np.zeros(d)
    c = R / xmax
    rng = rng_for(seed, _TAG_ORACLE)
    best_w = np.zeros(d)
    best_obj = math.inf
    for r in range(restarts):
        if r == 0:
            w = np.zeros(d)
        else:
            v = rng.normal(size=d)
            w = v * (R * rng.random() / np.linalg.norm(v))
        for k in range(1, passes + 1):
            margins = y * (X @ w)
            obj = float(np.maximum(0.0, 1.0 - margins).sum())
            if obj < best_obj:
                best_obj, best_w = obj, w.copy()
            viol = margins < 1.0
            if not np.any(viol):
                break
            g = -(y[viol, None] * X[viol]).sum(axis=0) / n
            w = w - (c / math.sqrt(k)) * g
            nw = float(np.linalg.norm(w))
            if nw > R:
                w *= R / nw
        obj = float(np.maximum(0.0, 1.0 - y * (X @ w)).sum())
        if obj < best_obj:
            best_obj, best_w = obj, w.copy()
    return best_w


def hinge_losses(stream: TaskStream, w: np.ndarray) -> np.ndarray:
    X = stream.dense_matrix()
    return np.maximum(0.0, 1.0 - stream.labels() * (X @ w))


def expert_error_matrix(kb: KnowledgeBase, stream: TaskStream) -> np.ndarray:
    """Per-step squared errors of every knowledge-base model, shape (T, n)."""
    M = kb.matrix()
    X = stream.dense_matrix()
    scores = M[:, : X.shape[1]] @ X.T
    return (np.clip(scores, -1.0, 1.0) - stream.labels()[None, :]) ** 2


def comparator_wstarstar(kb: KnowledgeBase, stream: TaskStream):
    """Exhaustive scan for the stored model with least cumulative squared
    error; ties break toward the lowest task id. Returns (model, per-step
    errors)."""
    if len(kb) == 0:
        raise ValueError("knowledge base is empty")
    E = expert_error_matrix(kb, stream)
    i = int(np.argmin(E.sum(axis=1)))
    return kb[i], E[i]


# ---------------------------------------------------------------------------
# bound evaluation
# ---------------------------------------------------------------------------


def _alphas(schedule: MixSchedule, n: int) -> np.ndarray:
    return np.array([schedule.value(t) for t in range(1, n + 1)])


def bound_theorem1(
    stream: TaskStream,
    kb: KnowledgeBase,
    hp: HyperParams,
    schedule: MixSchedule,
    wstar: np.ndarray | None = None,
    wstar_seed: int = 0,
) -> float | None:
    """Known-horizon cumulative-error bound; None when the knowledge base is
    too small for the log T term to make sense."""
    T, n = len(kb), len(stream)
    if T < 2:
        return None
    al = _alphas(schedule, n)
    _, e_best = comparator_wstarstar(kb, stream)
    if wstar is None:
        wstar = comparator_wstar(stream, hp.R, seed=wstar_seed)
    hinge = hinge_losses(stream, wstar)
    term_experts = float(al @ e_best)
    term_hinge = float((1.0 - al) @ hinge)
    term_forecast = 4.0 * math.sqrt(2.0 * math.log(T) * al.sum())
    term_ogd = float((1.0 - al).sum()) * hp.R * (hp.X + hp.R) * math.sqrt((math.log(n) + 1.0) / n)
    return term_experts + term_hinge + term_forecast + term_ogd


def bound_theorem2(
    stream: TaskStream,
    kb: KnowledgeBase,
    hp: HyperParams,
    schedule: MixSchedule,
    wstar: np.ndarray | None = None,
    wstar_seed: int = 0,
) -> float | None:
    """Unknown-horizon analogue with the doubling-restart forecaster term
    and the horizon-free regularization term."""
    T, n = len(kb), len(stream)
    if T < 2:
        return None
    al = _alphas(schedule, n)
    _, e_best = comparator_wstarstar(kb, stream)
    if wstar is None:
        wstar = comparator_wstar(stream, hp.R, seed=wstar_seed)
    hinge = hinge_losses(stream, wstar)
    term_experts = float(al @ e_best)
    term_hinge = float((1.0 - al) @ hinge)
    term_forecast = 4.0 * math.log(n) * math.sqrt(2.0 * math.log(T) * al.sum())
    term_ogd = hp.R * (hp.X + hp.R) * float((1.0 - al).sum())
    return term_experts + term_hinge + term_forecast + term_ogd


def corollary2_bound(
    stream: TaskStream,
    kb: KnowledgeBase,
    hp: HyperParams,
    schedule: MixSchedule,
    delta: float = 0.05,
    wstar: np.ndarray | None = None,
    wstar_seed: int = 0,
) -> float | None:
    """High-probability bound for the sampling prediction rule."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    base = bound_theorem1(stream, kb, hp, schedule, wstar=wstar, wstar_seed=wstar_seed)
    if base is None:
        return None
    al = _alphas(schedule, len(stream))
    return base + math.sqrt(8.0 * float(al @ al) * math.log(1.0 / delta))


def corollary1_k(gamma: float, zeta: float, X: float, R: float, T: int) -> float:
    """Smallest admissible K for the short-task dominance corollary."""
    if T < 2 or zeta <= 0.0:
        return math.inf
    return max((1.0 + X * R) / (gamma * zeta), R * (X + R) / (4.0 * gamma * math.sqrt(2.0 * math.log(T))))


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    dataset: str
    policies: tuple[str, ...] = POLICY_ORDER
    repetitions: int = 10
    seed: int = 0
    lambda_mode: str = "grid"  # "grid" | "theory"
    lambda_value: float | None = None  # explicit override, skips selection
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    schedule_spec: str = "linear"
    eps_mode: str = "fixed"
    split_frac: float = 0.2
    jobs: int = 1
    measure_time: bool = True
    keep_rep0_traces: bool = False

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        seen = []
        for p in self.policies:
            get_policy(p)
            if p not in seen:
                seen.append(p)
        # canonical order keeps outputs stable regardless of flag order
        self.policies = tuple(sorted(seen, key=POLICY_ORDER.index))


@dataclass
class RunRow:
    policy: str
    repetition: int
    ace: float
    seconds: float
    seed: int


@dataclass
class PolicySummary:
    mean_ace: float
    sd_ace: float
    mean_seconds: float
    sd_seconds: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    lambda_used: float | None
    hp: HyperParams
    rows: list[RunRow]
    summary: dict[str, PolicySummary]
    task_rates: dict[str, np.ndarray]  # (reps, n_tasks) error rate by position
    prefix_ace: dict[str, np.ndarray]  # mean over reps of running task-mean
    last_task_curves: dict[str, np.ndarray]  # rep 0 cumulative errors, last task
    rep0_traces: dict[str, list[TaskTrace]] = field(default_factory=dict)


def _sd(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


def resolve_hyperparams(config: ExperimentConfig, tasks: list[TaskStream]):
    """Fix lambda (and X/R for theory mode) before any repetition runs."""
    if config.lambda_mode == "theory":
        x_hat = estimate_x(tasks)
        lam_sel = (
            config.lambda_value
            if config.lambda_value is not None
            else select_lambda(tasks, config.lambda_grid, config.seed, config.split_frac)
        )
        r_hat = estimate_r(tasks, lam_sel, config.schedule_spec)
        return None, HyperParams(lambda_mode="theory", R=r_hat, X=x_hat, eps_mode=config.eps_mode)
    lam = (
        config.lambda_value
        if config.lambda_value is not None
        else select_lambda(tasks, config.lambda_grid, config.seed, config.split_frac)
    )
    return lam, HyperParams(lam=lam, eps_mode=config.eps_mode)


def _run_one_rep(config: ExperimentConfig, hp: HyperParams, rep: int):
    """Worker for one repetition: reshuffle, run every policy, distill."""
    tasks = load_dataset(config.dataset, config.seed)
    rep_rng = rng_for(config.seed, _TAG_SHUFFLE, rep)
    order = rep_rng.permutation(len(tasks))
    shuffled = [shuffle_stream(tasks[i], rep_rng) for i in order]
    sched = lambda s: make_schedule(config.schedule_spec, s)
    out = {}
    for pol in config.policies:
        prng = rng_for(config.seed, _TAG_POLICY, rep, POLICY_ORDER.index(pol))
        t0 = time.perf_counter()
        traces = run_lifelong(pol, shuffled, sched, hp, rng=prng)
        seconds = time.perf_counter() - t0 if config.measure_time else 0.0
        rates = np.array([t.error_rate for t in traces])
        curve = np.cumsum([int(r.error_flag) for r in traces[-1].records])
        out[pol] = {
            "ace": float(rates.mean()),
            "seconds": seconds,
            "rates": rates,
            "last_curve": curve,
            "traces": traces if (config.keep_rep0_traces and rep == 0) else None,
        }
    return rep, out


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    tasks = load_dataset(config.dataset, config.seed)
    lam, hp = resolve_hyperparams(config, tasks)

    reps = range(config.repetitions)
    if config.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = dict(pool.map(_rep_call, [(config, hp, r) for r in reps]))
    else:
        results = dict(_run_one_rep(config, hp, r) for r in reps)

    rows = []
    task_rates: dict[str, list[np.ndarray]] = {p: [] for p in config.policies}
    last_curves = {}
    rep0_traces = {}
    for rep in sorted(results):
        for pol in config.policies:
            r = results[rep][pol]
            rows.append(RunRow(pol, rep, r["ace"], r["seconds"], config.seed))
            task_rates[pol].append(r["rates"])
            if rep == 0:
                last_curves[pol] = r["last_curve"]
                if r["traces"] is not None:
                    rep0_traces[pol] = r["traces"]

    summary = {}
    prefix = {}
    rates_out = {}
    for pol in config.policies:
        aces = np.array([row.ace for row in rows if row.policy == pol])
        secs = np.array([row.seconds for row in rows if row.policy == pol])
        summary[pol] = PolicySummary(float(aces.mean()), _sd(aces), float(secs.mean()), _sd(secs))
        mat = np.vstack(task_rates[pol])
        rates_out[pol] = mat
        prefix[pol] = np.cumsum(mat.mean(axis=0)) / np.arange(1, mat.shape[1] + 1)

    return ExperimentReport(
        config=config,
        lambda_used=lam,
        hp=hp,
        rows=rows,
        summary=summary,
        task_rates=rates_out,
        prefix_ace=prefix,
        last_task_curves=last_curves,
        rep0_traces=rep0_traces,
    )


def _rep_call(args):
    return _run_one_rep(*args)


# ---------------------------------------------------------------------------
# bound checking pipeline
# ---------------------------------------------------------------------------


@dataclass
class BoundRow:
    task_position: int
    task_name: str
    n_steps: int
    kb_size: int
    e_observed: int
    bound_t1: float | None
    bound_t2: float | None
    t0: int | None
    e_observed_sample: int
    bound_c2: float | None

    @property
    def applicable(self) -> bool:
        return self.bound_t1 is not None


@dataclass
class BoundReport:
    dataset: str
    seed: int
    X: float
    R: float
    delta: float
    gamma: float
    rows: list[BoundRow]

    @property
    def violations(self) -> int:
        return sum(1 for r in self.rows if r.applicable and r.e_observed > r.bound_t1)


def run_bound_checks(
    dataset: str,
    seed: int = 0,
    schedule_spec: str = "linear",
    delta: float = 0.05,
    gamma: float = 0.5,
    lambda_grid=LAMBDA_GRID,
    split_frac: float = 0.2,
) -> BoundReport:
    """Run the weight-vote policy under the known-horizon theory settings and
    evaluate every bound on every task.

    Sampling-rule violations of the high-probability bound are logged, never
    raised: that bound only holds with probability 1 - delta.
    """
    tasks = load_dataset(dataset, seed)
    rep_rng = rng_for(seed, _TAG_SHUFFLE, 0)
    order = rep_rng.permutation(len(tasks))
    shuffled = [shuffle_stream(tasks[i], rep_rng) for i in order]

    x_hat = estimate_x(shuffled)
    lam_sel = select_lambda(shuffled, lambda_grid, seed, split_frac)
    r_hat = estimate_r(shuffled, lam_sel, schedule_spec)
    hp = HyperParams(lambda_mode="theory", R=r_hat, X=x_hat, eps_mode="fixed")
    sched = lambda s: make_schedule(schedule_spec, s)

    kb_sum = KnowledgeBase()
    sum_traces = run_lifelong(
        "aklo-sum", shuffled, sched, hp, rng=rng_for(seed, _TAG_POLICY, 0, 4), kb=kb_sum
    )
    kb_sample = KnowledgeBase()
    sample_traces = run_lifelong(
        "aklo-sample", shuffled, sched, hp, rng=rng_for(seed, _TAG_POLICY, 0, 5), kb=kb_sample
    )

    rows = []
    for pos, stream in enumerate(shuffled):
        schedule = make_schedule(schedule_spec, stream)
        n = len(stream)
        e_obs = sum_traces[pos].errors
        e_obs_sample = sample_traces[pos].errors
        if pos < 2:
            rows.append(
                BoundRow(pos, stream.name, n, pos, e_obs, None, None, None, e_obs_sample, None)
            )
            continue
        prefix_sum = KnowledgeBase(kb_sum.models[:pos])
        prefix_sample = KnowledgeBase(kb_sample.models[:pos])
        wstar = comparator_wstar(stream, r_hat, seed=seed + pos)
        b1 = bound_theorem1(stream, prefix_sum, hp, schedule, wstar=wstar)
        b2 = bound_theorem2(stream, prefix_sum, hp, schedule, wstar=wstar)
        _, e_best = comparator_wstarstar(prefix_sum, stream)
        zeta = float(e_best.sum())
        K = corollary1_k(gamma, zeta, x_hat, r_hat, pos)
        if math.isinf(K):
            t0 = sum(1 for t in range(1, n + 1) if schedule.value(t) >= 1.0)
        else:
            t0 = corollary1_threshold(schedule, K, n)
        c2 = corollary2_bound(stream, prefix_sample, hp, schedule, delta=delta, wstar=wstar)
        if c2 is not None and e_obs_sample > c2:
            log.warning(
                "sampling bound exceeded on task %d (%s): %d > %.3f (holds w.p. %.2f)",
                pos,
                stream.name,
                e_obs_sample,
                c2,
                1.0 - delta,
            )
        rows.append(BoundRow(pos, stream.name, n, pos, e_obs, b1, b2, t0, e_obs_sample, c2))
    return BoundReport(dataset, seed, x_hat, r_hat, delta, gamma, rows)


# ---------------------------------------------------------------------------
# delimited output
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_runs_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("policy,repetition,ace,seconds,seed\n")
        for r in report.rows:
            fh.write(f"{r.policy},{r.repetition},{_fmt(r.ace)},{_fmt(r.seconds)},{r.seed}\n")


def write_summary_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("policy,mean_ace,sd_ace,mean_s,sd_s\n")
        for pol in report.config.policies:
            s = report.summary[pol]
            fh.write(
                f"{pol},{_fmt(s.mean_ace)},{_fmt(s.sd_ace)},"
                f"{_fmt(s.mean_seconds)},{_fmt(s.sd_seconds)}\n"
            )


def write_trajectory_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("policy,task_position,mean_task_error_rate,mean_prefix_ace\n")
        for pol in report.config.policies:
            mean_rates = report.task_rates[pol].mean(axis=0)
            for j, (rate, pace) in enumerate(zip(mean_rates, report.prefix_ace[pol])):
                fh.write(f"{pol},{j},{_fmt(float(rate))},{_fmt(float(pace))}\n")


def write_trace_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,confidence_current,confidence_kb,alpha,predicted_label,true_label,error_flag\n")
        for r in records:
            fh.write(
                f"{r.t},{_fmt(r.confidence_current)},{_fmt(r.confidence_kb)},{_fmt(r.alpha)},"
                f"{r.predicted_label},{r.true_label},{int(r.error_flag)}\n"
            )


def write_bounds_csv(report: BoundReport, path) -> None:
    def cell(v):
        return "n/a" if v is None else _fmt(v)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            "task_position,task_name,n_steps,kb_size,e_observed,bound_t1,bound_t2,t0,"
            "e_observed_sample,bound_c2\n"
        )
        for r in report.rows:
            fh.write(
                f"{r.task_position},{r.task_name},{r.n_steps},{r.kb_size},{r.e_observed},"
                f"{cell(r.bound_t1)},{cell(r.bound_t2)},{cell(r.t0)},"
                f"{r.e_observed_sample},{cell(r.bound_c2)}\n"
            )
