"""Synthetic addition and multiplication problems.

Each sequence has two channels: a value and a 0/1 marker. Exactly two steps
are marked, one in each half of the sequence. Addition draws values from
U[-1, 1] with target ``0.5 + (v1 + v2) / 4``; multiplication draws from
U[0, 1] with target ``v1 * v2``. Both keep targets in [0, 1].

Randomness is addressed, not consumed: instance ``k`` of batch ``n`` always
comes from counter block ``(n, k)`` of the training stream, regardless of
which other instances have been generated.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .model import SequenceBatch
from .numeric import MASK_64, Rng

INIT_STREAM = 0
TRAIN_STREAM = 1
TEST_STREAM = 2

_LENGTH_SLOT = MASK_64


class TaskKind(str, enum.Enum):
    ADDITION = "addition"
    MULTIPLICATION = "multiplication"


@dataclass(frozen=True)
class Fixed:
    """Lengths uniform on the integers of [T0, floor(1.1 * T0)]."""

    T0: int

    def __post_init__(self):
        if self.T0 < 1:
            raise ValueError(f"T0 must be positive, got {self.T0}")

    @property
    def bounds(self):
        return self.T0, (11 * self.T0) // 10

    def __str__(self):
        return f"fixed:{self.T0}"


@dataclass(frozen=True)
class Range:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 1 or self.lo > self.hi:
            raise ValueError(f"invalid length range [{self.lo}, {self.hi}]")

    @property
    def bounds(self):
        return self.lo, self.hi

    def __str__(self):
        return f"range:{self.lo}-{self.hi}"


LengthSpec = Union[Fixed, Range]


def parse_length_spec(text: str) -> LengthSpec:
    kind, _, arg = text.partition(":")
    if kind == "fixed":
        return Fixed(int(arg))
    if kind == "range":
        lo, _, hi = arg.partition("-")
        return Range(int(lo), int(hi))
    raise ValueError(f"unrecognised length spec {text!r}")


def draw_length(spec: LengthSpec, gen: np.random.Generator) -> int:
    lo, hi = spec.bounds
    return int(gen.integers(lo, hi + 1))


@dataclass(frozen=True)
class TaskInstance:
    inputs: np.ndarray  # (T, 2)
    target: float
    marked: tuple
    kind: TaskKind

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    def as_batch(self) -> SequenceBatch:
        return SequenceBatch(self.inputs[None], [self.target])

    def to_record(self) -> dict:
        return {
            "values": self.inputs[:, 0].tolist(),
            "markers": self.inputs[:, 1].astype(int).tolist(),
            "target": self.target,
            "kind": self.kind.value,
            "T": self.T,
        }


def task_target(kind: TaskKind, v1: float, v2: float) -> float:
    if TaskKind(kind) is TaskKind.ADDITION:
        return 0.5 + (v1 + v2) / 4.0
    return v1 * v2


def make_instance(kind: TaskKind, T: int, gen: np.random.Generator) -> TaskInstance:
    """Draw one sequence of exactly ``T`` steps from ``gen``."""
    kind = TaskKind(kind)
    if T < 2:
        raise ValueError(f"sequences need T >= 2 for two markers, got T={T}")
    half = T // 2
    if kind is TaskKind.ADDITION:
        values = gen.uniform(-1.0, 1.0, size=T)
    else:
        values = gen.uniform(0.0, 1.0, size=T)
    i1 = int(gen.integers(0, half))
    i2 = int(gen.integers(half, T))
    inputs = np.zeros((T, 2))
    inputs[:, 0] = values
    inputs[(i1, i2), 1] = 1.0
    return TaskInstance(inputs, task_target(kind, values[i1], values[i2]), (i1, i2), kind)


def generate(kind: TaskKind, spec: LengthSpec, rng: Rng, index: int = 0) -> TaskInstance:
    """One instance; its length and contents come from counter block ``index``."""
    T = draw_length(spec, rng.generator(index, _LENGTH_SLOT))
    return make_instance(kind, T, rng.generator(index, 0))


def generate_batch(kind: TaskKind, spec: LengthSpec, B: int, rng: Rng,
                   index: int = 0) -> SequenceBatch:
    """``B`` instances sharing one length drawn for batch ``index``."""
    if B < 1:
        raise ValueError(f"batch size must be >= 1, got {B}")
    cur = rng.cursor()
    T = draw_length(spec, cur.at(index, _LENGTH_SLOT))
    items = [make_instance(kind, T, cur.at(index, k)) for k in range(B)]
    return SequenceBatch(np.stack([it.inputs for it in items]), [it.target for it in items])


def make_test_set(kind: TaskKind, spec: LengthSpec, n: int, seed: int) -> list:
    if n < 1:
        raise ValueError(f"test set size must be >= 1, got {n}")
    cur = Rng(seed, TEST_STREAM).cursor()
    return [make_instance(kind, draw_length(spec, cur.at(i, _LENGTH_SLOT)), cur.at(i, 0))
            for i in range(n)]


def group_by_length(instances: Iterable[TaskInstance]) -> list:
    """Stack instances into one SequenceBatch per distinct length, ascending T."""
    groups: dict = {}
    for inst in instances:
        groups.setdefault(inst.T, []).append(inst)
    return [
        SequenceBatch(np.stack([i.inputs for i in g]), [i.target for i in g])
        for _, g in sorted(groups.items())
    ]


def order_probe(T: int, x=(1.0, 1.0), y=(-1.0, 1.0)):
    """Two sequences, X-then-Y and Y-then-X, zero everywhere else.

    Symbols are (value, marker) steps placed at the first and middle steps.
    Each sequence is a time permutation of the other.
    """
    if T < 2:
        raise ValueError(f"order probe needs T >= 2, got {T}")
    i, j = 0, T // 2
    xy = np.zeros((T, 2))
    xy[i], xy[j] = x, y
    yx = xy.copy()
    yx[[i, j]] = yx[[j, i]]
    return xy, yx


def dump_jsonl(instances: Iterable[TaskInstance], fh) -> int:
    n = 0
    for inst in instances:
        fh.write(json.dumps(inst.to_record()) + "\n")
        n += 1
    return n
