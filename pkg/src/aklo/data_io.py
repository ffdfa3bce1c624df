"""Task streams and the sparse text/manifest formats that carry them.

Task file: UTF-8 lines ``<label> <idx>:<val> ...`` with labels +1/-1 and
``#`` starting a comment line. Manifest: ``key = value`` lines; ``task``
is repeatable and resolved relative to the manifest's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .vectors import SparseVec


class DataFormatError(ValueError):
    pass


@dataclass
class TaskStream:
    """Ordered labeled examples for one task."""

    examples: list[tuple[SparseVec, int]]
    dim: int
    known_horizon: int | None = None
    name: str = ""

    def __post_init__(self) -> None:
        for x, y in self.examples:
            if y not in (-1, 1):
                raise ValueError(f"label must be +1 or -1, got {y!r}")
            if x.dim > self.dim:
                raise ValueError(f"example dim {x.dim} exceeds stream dim {self.dim}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.examples], dtype=np.float64)

    def dense_matrix(self) -> np.ndarray:
        X = np.zeros((len(self.examples), self.dim))
        for r, (x, _) in enumerate(self.examples):
            X[r, x.idx] = x.val
        return X

    def max_example_norm(self) -> float:
        return max((x.norm() for x, _ in self.examples), default=0.0)


@dataclass
class TaskManifest:
    task_paths: list[str] = field(default_factory=list)
    dim: int | None = None
    add_bias: bool = False
    subsample: int | None = None
    seed: int = 0


def _parse_label(tok: str, where: str) -> int:
    if tok in ("+1", "1"):
        return 1
    if tok == "-1":
        return -1
    raise DataFormatError(f"{where}: label must be +1 or -1, got {tok!r}")


def parse_task_lines(lines, where: str = "<memory>"):
    """Yield (label, [(idx, val), ...]) for every data line."""
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        toks = text.split()
        y = _parse_label(toks[0], f"{where}:{lineno}")
        entries = []
        for tok in toks[1:]:
            try:
                i_s, v_s = tok.split(":", 1)
                i, v = int(i_s), float(v_s)
            except ValueError:
                raise DataFormatError(f"{where}:{lineno}: malformed entry {tok!r}") from None
            if i < 0:
                raise DataFormatError(f"{where}:{lineno}: negative index {i}")
            entries.append((i, v))
        seen = [i for i, _ in entries]
        if len(set(seen)) != len(seen):
            raise DataFormatError(f"{where}:{lineno}: duplicate feature index")
        yield y, entries


def scan_max_index(path) -> int:
    """Largest feature index in a task file, -1 if the file stores none."""
    top = -1
    with open(path, "r", encoding="utf-8") as fh:
        for _, entries in parse_task_lines(fh, str(path)):
            for i, _ in entries:
                top = max(top, i)
    return top


def load_task(path, dim: int, add_bias: bool = False, known_horizon: bool = True) -> TaskStream:
    """Load one task file at a fixed experiment dimension.

    With ``add_bias`` the slot ``dim - 1`` is reserved for a constant 1.0
    feature appended to every example.
    """
    top_data = dim - 2 if add_bias else dim - 1
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for y, entries in parse_task_lines(fh, str(path)):
            for i, _ in entries:
                if i > top_data:
                    raise DataFormatError(f"{path}: index {i} out of range for dim {dim}")
            if add_bias:
                entries = entries + [(dim - 1, 1.0)]
            examples.append((SparseVec.from_pairs(entries, dim), y))
    if not examples:
        raise DataFormatError(f"{path}: empty task")
    return TaskStream(
        examples,
        dim=dim,
        known_horizon=len(examples) if known_horizon else None,
        name=os.path.splitext(os.path.basename(str(path)))[0],
    )


def write_task(stream: TaskStream, path) -> None:
    """Emit a task in canonical form: sorted indices, shortest float repr."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in stream:
            parts = ["+1" if y == 1 else "-1"]
            parts.extend(f"{int(i)}:{v!r}" for i, v in zip(x.idx, x.val))
            fh.write(" ".join(parts) + "\n")


_MANIFEST_KEYS = {"task", "dim", "add_bias", "subsample", "seed"}


def parse_manifest(path) -> TaskManifest:
    man = TaskManifest()
    base = os.path.dirname(os.path.abspath(str(path)))
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise DataFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = text.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _MANIFEST_KEYS:
                raise DataFormatError(f"{path}:{lineno}: unknown key {key!r}")
            if key == "task":
                man.task_paths.append(os.path.join(base, value))
            elif key == "dim":
                man.dim = int(value)
            elif key == "subsample":
                man.subsample = int(value)
            elif key == "seed":
                man.seed = int(value)
            elif key == "add_bias":
                if value.lower() not in ("true", "false", "0", "1"):
                    raise DataFormatError(f"{path}:{lineno}: add_bias must be boolean")
                man.add_bias = value.lower() in ("true", "1")
    if not man.task_paths:
        raise DataFormatError(f"{path}: manifest lists no tasks")
    for p in man.task_paths:
        if not os.path.exists(p):
            raise DataFormatError(f"{path}: missing task file {p}")
    return man


def write_manifest(man: TaskManifest, path) -> None:
    base = os.path.dirname(os.path.abspath(str(path)))
    with open(path, "w", encoding="utf-8") as fh:
        if man.dim is not None:
            fh.write(f"dim = {man.dim}\n")
        fh.write(f"add_bias = {'true' if man.add_bias else 'false'}\n")
        if man.subsample is not None:
            fh.write(f"subsample = {man.subsample}\n")
        fh.write(f"seed = {man.seed}\n")
        for p in man.task_paths:
            fh.write(f"task = {os.path.relpath(p, base)}\n")


def load_manifest_tasks(path) -> list[TaskStream]:
    """Load all tasks behind a manifest at one shared dimension, applying
    bias augmentation and per-task subsampling."""
    man = parse_manifest(path)
    top = max(scan_max_index(p) for p in man.task_paths)
    dim = top + 1 + (1 if man.add_bias else 0)
    if man.dim is not None:
        if man.dim < dim:
            raise DataFormatError(f"{path}: dim override {man.dim} below data requirement {dim}")
        dim = man.dim
    streams = [load_task(p, dim, add_bias=man.add_bias) for p in man.task_paths]
    if man.subsample is not None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(man.seed)))
        streams = [subsample(s, min(man.subsample, len(s)), rng) for s in streams]
    return streams


def subsample(stream: TaskStream, k: int, rng) -> TaskStream:
    """Uniform sample of ``k`` examples without replacement, order shuffled."""
    if k > len(stream):
        raise ValueError(f"cannot sample {k} from {len(stream)} examples")
    picked = rng.choice(len(stream), size=k, replace=False)
    rng.shuffle(picked)
    examples = [stream.examples[i] for i in picked]
    return TaskStream(examples, dim=stream.dim, known_horizon=k, name=stream.name)


def shuffle_stream(stream: TaskStream, rng) -> TaskStream:
    perm = rng.permutation(len(stream))
    examples = [stream.examples[i] for i in perm]
    return TaskStream(
        examples, dim=stream.dim, known_horizon=stream.known_horizon, name=stream.name
    )
