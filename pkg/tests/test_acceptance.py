"""Exit criteria for the build, one test per criterion.

Training criteria run the full protocol (batch 100, 1000 updates per epoch,
D = 100, 1000 test sequences, threshold .04) and take a while on one core.
Learning rates are tried largest first and a search stops as soon as its
outcome is decided; stopping early never turns a miss into a pass.
"""
import os
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_batch, record
from ffattention import io as fio
from ffattention.cli import main, run_bench
from ffattention.model import PoolingMode, SequenceBatch, forward, param_count
from ffattention.numeric import Rng
from ffattention.optim import init_params
from ffattention.tasks import Fixed, Range, TaskInstance, TaskKind, generate, make_test_set, order_probe
from ffattention.trainer import DEFAULT_LR_GRID, TrainConfig, evaluate, train
from ffattention.verify import (check_gradients, check_permutation_invariance,
                                check_pooling_equivalence, pooling_difference, random_params)

SEEDS = (1, 2, 3)
LR_ORDER = tuple(sorted(DEFAULT_LR_GRID, reverse=True))
ATT, MEAN = PoolingMode.ATTENTION, PoolingMode.MEAN
ADD, MUL = TaskKind.ADDITION, TaskKind.MULTIPLICATION


class Runs:
    """Memoised training runs that can be extended to a larger epoch cap."""

    def __init__(self):
        self.results = {}
        self.test_sets = {}

    def _test_set(self, task, lengths, seed):
        key = (task, lengths, seed)
        if key not in self.test_sets:
            self.test_sets[key] = make_test_set(task, lengths, 1000, seed)
        return self.test_sets[key]

    def run(self, task, lengths, pooling, seed, lr, cap, target=1.0):
        key = (task, lengths, pooling, seed, lr, target)
        cfg = TrainConfig(task=task, lengths=lengths, pooling=pooling, lr=lr, seed=seed,
                          max_epochs=cap, target_accuracy=target)
        test = self._test_set(task, lengths, seed)
        old = self.results.get(key)
        if old is None:
            res = train(cfg, test_set=test)
        elif old.reports and old.reports[-1].test_accuracy >= target or len(old.reports) >= cap:
            return old
        else:
            more = train(cfg, test_set=test,
                         resume=(old.final_params, old.optimizer, len(old.reports)))
            more.reports = old.reports + more.reports
            res = more
        self.results[key] = res
        return res

    def solved_within(self, task, t0, pooling, seed, lr, cap):
        """Epoch of first perfect accuracy if it is <= cap, else None."""
        res = self.run(task, Fixed(t0), pooling, seed, lr, cap)
        s = res.solved_at_epoch
        return s if s is not None and s <= cap else None

    def grid_within(self, task, t0, pooling, seed, cap):
        """(epoch, lr) of some grid lr solving within ``cap`` epochs, else None."""
        for lr in LR_ORDER:
            s = self.solved_within(task, t0, pooling, seed, lr, cap)
            if s is not None:
                return s, lr
        return None

    def grid_best(self, task, t0, pooling, seed, cap):
        """Fewest epochs to solve over the whole grid, searched with shrinking caps."""
        best = None
        for lr in LR_ORDER:
            limit = cap if best is None else best[0] - 1
            if limit < 1:
                break
            s = self.solved_within(task, t0, pooling, seed, lr, limit)
            if s is not None:
                best = (s, lr)
        return best


@pytest.fixture(scope="session")
def runs():
    return Runs()


def two_of_three(check):
    """Evaluate ``check(seed)`` over SEEDS until a 2-of-3 majority is decided."""
    outcomes = {}
    for seed in SEEDS:
        outcomes[seed] = check(seed)
        wins = sum(1 for v in outcomes.values() if v[0])
        losses = len(outcomes) - wins
        if wins >= 2 or losses >= 2:
            break
    return sum(1 for v in outcomes.values() if v[0]) >= 2, outcomes


def _table1_criterion(runs, name, task, limit, ref):
    lines, all_ok = [], True
    for t0 in (50, 100, 500):
        def check(seed):
            hit = runs.grid_within(task, t0, ATT, seed, limit)
            return hit is not None, hit
        ok, outcomes = two_of_three(check)
        all_ok &= ok
        shown = ", ".join(f"seed {s}: " + (f"epoch {h[0]} @ lr {h[1]}" if h else f"unsolved in {limit}")
                          for s, (_, h) in outcomes.items())
        lines.append(f"T0={t0} (ref {ref[t0]}) -> {shown}")
    record(name, all_ok, f"limit {limit} epochs, 2 of 3 seeds; " + "; ".join(lines))
    return all_ok


def test_c01_table1_addition_attention(runs):
    assert _table1_criterion(runs, "C1 Table 1 addition/attention", ADD, 5, {50: 1, 100: 1, 500: 1})


def test_c02_table1_multiplication_attention(runs):
    assert _table1_criterion(runs, "C2 Table 1 multiplication/attention", MUL, 15,
                             {50: 1, 100: 2, 500: 4})


def test_c03_attention_beats_mean_multiplication(runs):
    t0, cap = 500, 15

    def check(seed):
        att = runs.grid_within(MUL, t0, ATT, seed, cap)
        if att is None:
            return False, f"attention unsolved in {cap}"
        mean = runs.grid_within(MUL, t0, MEAN, seed, att[0])
        if mean is None:
            return True, f"attention {att[0]}, mean unsolved within {att[0]}"
        # Mean solved within attention's first bound; need attention's exact best.
        att = runs.grid_best(MUL, t0, ATT, seed, mean[0])
        mean = runs.grid_best(MUL, t0, MEAN, seed, mean[0])
        ok = att is not None and att[0] < mean[0]
        return ok, f"attention {att[0] if att else '>' + str(mean[0])}, mean {mean[0]}"

    ok, outcomes = two_of_three(check)
    record("C3 attention beats mean (multiplication T0=500)", ok,
           "; ".join(f"seed {s}: {d}" for s, (_, d) in outcomes.items()) + " (ref 4 vs 8)")
    assert ok


VARLEN = Range(50, 500)
VARLEN_LR = LR_ORDER[0]


def test_c04_variable_length(runs):
    hit = None
    for lr in LR_ORDER:
        res = runs.run(ADD, VARLEN, ATT, 1, lr, 100, target=0.99)
        if res.final_accuracy >= 0.99:
            hit = (lr, len(res.reports), res.final_accuracy)
            break
    # Attention trains under the normal protocol; mean pooling then gets the
    # same lr and exactly as many epochs as attention used.
    att = runs.run(MUL, VARLEN, ATT, 1, VARLEN_LR, 100)
    mean = runs.run(MUL, VARLEN, MEAN, 1, VARLEN_LR, len(att.reports))
    ok_add = hit is not None
    ok_mul = mean.final_accuracy < att.final_accuracy
    detail = (f"addition attention {'reached %.3f at epoch %d (lr %g)' % (hit[2], hit[1], hit[0]) if hit else 'below 0.99 after 100 epochs'}; "
              f"multiplication after {len(att.reports)}/{len(mean.reports)} epochs at lr {VARLEN_LR}: "
              f"attention {att.final_accuracy:.3f} vs mean {mean.final_accuracy:.3f} "
              f"(ref at 50-10000: 99.9%/99.4% vs 77.4%/55.5%)")
    record("C4 variable length Range(50,500)", ok_add and ok_mul, detail)
    assert ok_add and ok_mul


def test_c05_parameter_counts():
    att = param_count(init_params(100, ATT, Rng(0)))
    mean = param_count(init_params(100, MEAN, Rng(0)))
    ok = (att, mean) == (10602, 10501)
    record("C5 parameter counts", ok, f"attention {att}, mean {mean} (ref 10,602 vs 10,501)")
    assert ok


def gradcheck_configs(n=20, seed=0):
    r = np.random.default_rng(seed)
    grid = [(D, T, B, p) for D in (1, 3, 10) for T in (1, 2, 17) for B in (1, 4) for p in (ATT, MEAN)]
    return [grid[i] for i in r.permutation(len(grid))[:n]]


def test_c06_gradient_correctness():
    import time
    start = time.perf_counter()
    r = np.random.default_rng(6)
    worst = 0.0
    configs = gradcheck_configs()
    assert len(configs) == 20
    assert {c[0] for c in configs} == {1, 3, 10} and {c[1] for c in configs} == {1, 2, 17}
    for D, T, B, pooling in configs:
        params = random_params(D, pooling, r)
        batch = SequenceBatch(r.uniform(-1, 1, (B, T, 2)), r.uniform(0, 1, B))
        worst = max(worst, check_gradients(params, batch).worst_error)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 60
    record("C6 gradient correctness", ok,
           f"{len(configs)} configs, worst relative error {worst:.2e} (< 1e-5), {elapsed:.1f}s")
    assert ok


def test_c07_permutation_invariance():
    r = np.random.default_rng(7)
    worst = 0.0
    for i in range(100):
        params = random_params(10, (ATT, MEAN)[i % 2], r)
        for T in (2, 9, 50):
            xy, yx = order_probe(T)
            y = forward(params, SequenceBatch(np.stack([xy, yx]), [0, 0])).Y
            worst = max(worst, abs(y[0] - y[1]))
        inst = generate((ADD, MUL)[i % 2], Fixed(50), Rng(i))
        perms = [r.permutation(inst.T) for _ in range(10)]
        stacked = np.stack([inst.inputs] + [inst.inputs[p] for p in perms])
        y = forward(params, SequenceBatch(stacked, np.zeros(11))).Y
        worst = max(worst, float(np.max(np.abs(y - y[0]))))
        assert check_permutation_invariance(params, inst.inputs, trials=2, rng=r)
    ok = worst <= 1e-10
    record("C7 permutation invariance", ok,
           f"100 parameter draws, XY/YX probes and 10 shuffles each: max |dy| {worst:.1e}")
    assert ok


def test_c08_pooling_equivalence():
    r = np.random.default_rng(8)
    equal, differ = 0, 0
    for _ in range(100):
        params = random_params(10, ATT, r)
        batch = make_batch(r, 4, int(r.integers(1, 30)))
        equal += check_pooling_equivalence(params, batch)
        batch = make_batch(r, 4, int(r.integers(2, 30)))
        differ += pooling_difference(params, batch) > 1e-6
    ok = equal == 100 and differ >= 90
    record("C8 pooling equivalence", ok,
           f"W_hc=0: {equal}/100 equal within 1e-12; live W_hc: {differ}/100 differ by > 1e-6")
    assert ok


def test_c09_accuracy_boundary():
    params = init_params(2, ATT, Rng(0))
    params = params.with_tensors(W_sy=np.zeros((1, 2)), b_sy=0.0)

    def inst(target):
        return TaskInstance(np.zeros((3, 2)), target, (0, 2), ADD)

    correct = evaluate(params, [inst(0.039)])
    wrong = evaluate(params, [inst(0.040)])
    ok = correct == 1.0 and wrong == 0.0
    record("C9 accuracy boundary", ok, f"|err|=0.039 -> {correct}, |err|=0.040 -> {wrong}")
    assert ok


def _numeric(path):
    return [{k: v for k, v in row.items() if k not in fio.TIMING_COLUMNS}
            for row in fio.read_csv(path)]


@pytest.mark.parametrize("argv", [
    ["train", "--task", "addition", "--t0", "20", "--lr", "0.003", "--seed", "5"],
    ["sweep", "--task", "multiplication", "--t0", "15", "--lr-grid", "0.001,0.01"],
    ["varlen", "--task", "multiplication", "--len-lo", "5", "--len-hi", "40", "--pooling", "both"],
    ["table1", "--t0s", "12", "--tasks", "addition", "--lr-grid", "0.01"],
], ids=["train", "sweep", "varlen", "table1"])
def test_c10_determinism(tmp_path, argv):
    small = ["--dim", "16", "--batch", "20", "--updates-per-epoch", "50", "--test-size", "100",
             "--epochs", "2"]
    files = []
    for sub in ("first", "second"):
        assert main([*argv, *small, "--out", str(tmp_path / sub)]) == 0
        files.append(tmp_path / sub / "epochs.csv")
    a, b = _numeric(files[0]), _numeric(files[1])
    ok = a == b and len(a) > 0
    record(f"C10 determinism ({argv[0]})", ok, f"{len(a)} CSV rows identical across two runs")
    assert ok


def test_c11_throughput():
    cores = os.cpu_count() or 1
    report = run_bench([1, 2, 4], T0=1000, B=100, D=100, repeats=3)
    rows = {r["workers"]: r for r in report["results"]}
    same = all(r["max_abs_output_diff"] <= 1e-10 for r in rows.values())
    detail = (f"speedup x{rows[2]['speedup']:.2f} (2 workers), x{rows[4]['speedup']:.2f} (4 workers); "
              f"outputs identical: {same}; host cores: {cores}")
    assert same
    if cores < 4:
        record("C11 throughput", None, detail + " -- needs a >= 4-core host")
        pytest.skip(f"speedup criterion needs >= 4 cores, host has {cores}")
    ok = rows[4]["speedup"] >= 2.0
    record("C11 throughput", ok, detail)
    assert ok
