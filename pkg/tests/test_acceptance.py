"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test reports a PASS/FAIL line through the `criterion` fixture; the
lines are repeated in the pytest terminal summary.
"""
import hashlib
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from stochbatch.autodiff import check_function, finite_difference_check, loss_and_grad, mul, sub, total
from stochbatch.config import DataSpec, ExperimentConfig, ModelSpec, OptimizerSpec
from stochbatch.data import make_blobs, plan_epoch
from stochbatch.harness import build_datasets, run_trial
from stochbatch.models import build_mlp, build_small_cnn
from stochbatch.optimizers import GateState, RefBatchState, StochasticBatchSGD, cma_apply, cma_fold, epoch_reset, sbs_reference_step
from stochbatch.oracle import gauss_seidel_gap
from stochbatch.probability import ProbabilityConfig, compute_group_stats, sample_indicators, update_probabilities
from stochbatch.schedules import LrSchedule
from stochbatch.trend import blobs_config, check_trend, digits_config, format_rows, run_trend

ROOT = Path(__file__).resolve().parents[1]

BLOBS_282 = ExperimentConfig(
    data=DataSpec(kind="blobs", n=400, classes=2, dim=2, separation=3.0, seed=2, holdout=100),
    model=ModelSpec(kind="mlp", hidden=(8,)),
    epochs=3,
    seed=5,
    batch_size=16,
)


def _trajectory(cfg):
    train, val = build_datasets(cfg)
    snaps = []
    run_trial(cfg, 0, train, val, lambda event, store, **_: event == "step" and snaps.append(store.data.copy()))
    return snaps


@pytest.mark.parametrize("momentum", [0.0, 0.9])
def test_1_sgd_reduction(criterion, momentum):
    sgd = _trajectory(BLOBS_282.replace(momentum=momentum))
    sbs = _trajectory(BLOBS_282.replace(momentum=momentum,
                                        optimizer=OptimizerSpec(kind="sbs", scheme="constant", constant_p=1.0)))
    same = len(sgd) == len(sbs) == 3 * 19 and all(np.array_equal(a, b) for a, b in zip(sgd, sbs))
    assert criterion(f"1 sgd-reduction (momentum {momentum})", same, f"{len(sgd)} steps compared bitwise")


def test_2_cma_oracle(criterion):
    n, bs = 100, 16
    ds = make_blobs(n, 2, 2, 3.0, 0)
    model = build_mlp(2, [8], 2)
    store = model.init_params(seed=1)
    rng = np.random.default_rng(0)
    worst_frozen, worst_ref = 0.0, 0.0
    st = GateState.fresh(model.num_params)
    ref = RefBatchState.fresh(model.num_params)
    for epoch in range(2):
        plan = plan_epoch(n, bs, 4, epoch)
        assert len(plan.batches[-1]) == n % bs
        never = GateState.fresh(model.num_params)
        for t, idx in enumerate(plan.batches):
            _, g = loss_and_grad(model, store, ds.inputs[idx], ds.labels[idx])
            # no parameter ever applied: g_tilde is the mean over the whole prefix
            cma_fold(never, g, len(idx))
            union = np.concatenate(plan.batches[: t + 1])
            _, exact = loss_and_grad(model, store, ds.inputs[union], ds.labels[union])
            worst_frozen = max(worst_frozen, float(np.abs(never.g_tilde - exact).max()))
            cma_apply(store.data.copy(), never, np.zeros(model.num_params, bool), 0.0)
            # random gates: every applied parameter's g_tilde vs its own accumulated union
            cma_fold(st, g, len(idx))
            chi = rng.random(model.num_params) < 0.3
            ref_g = sbs_reference_step(model, store, ds, plan, t, ref, chi, 0.0)
            if chi.any():
                worst_ref = max(worst_ref, float(np.abs(ref_g[chi] - st.g_tilde[chi]).max()))
            cma_apply(store.data, st, chi, 0.0)
        epoch_reset(st)
        epoch_reset(ref)
    worst = max(worst_frozen, worst_ref)
    assert criterion("2 cma-oracle", worst <= 1e-12, f"max abs err {worst:.2e} (frozen {worst_frozen:.1e}, gated {worst_ref:.1e})")


@pytest.mark.parametrize(
    "label,hidden,n,bs",
    [("logistic regression", [], 200, 16), ("2-8-2 MLP", [8], 1000, 64)],
)
def test_3_gauss_seidel_gap(criterion, label, hidden, n, bs):
    ds = make_blobs(n, 2, 2, 3.0, 0)
    model = build_mlp(2, hidden, 2)
    store = model.init_params(seed=0)
    big = gauss_seidel_gap(model, store, ds, bs, 1e-2, seed=3).max_gap
    small = gauss_seidel_gap(model, store, ds, bs, 5e-3, seed=3).max_gap
    zero = gauss_seidel_gap(model, store, ds, bs, 0.0, seed=3).max_gap
    ratio = small / big
    ok = abs(ratio - 0.5) <= 0.25 * 0.5 and zero <= 1e-12
    assert criterion(f"3 gauss-seidel gap ({label})", ok, f"gap {big:.3e} -> {small:.3e}, ratio {ratio:.4f}, eta=0 gap {zero:.1e}")


def test_4_gradient_correctness(criterion):
    rng = np.random.default_rng(0)
    mlp = build_mlp(2, [8], 2)
    r_mlp = finite_difference_check(mlp, mlp.init_params(seed=1), rng.normal(size=(4, 2)), rng.integers(0, 2, 4), step=1e-5)
    cnn = build_small_cnn((1, 8, 8), [4], 10)
    r_cnn = finite_difference_check(cnn, cnn.init_params(seed=2), rng.normal(size=(4, 1, 8, 8)), rng.integers(0, 10, 4), step=1e-5)
    c = np.array([0.5, -1.0, 2.0])
    r_quad = check_function(lambda w: total(mul(sub(w, c), sub(w, c))), [1.5, 0.25, -0.75], step=1e-5)
    ok = r_mlp.max_rel_error < 1e-4 and r_cnn.max_rel_error < 1e-4 and r_quad.max_rel_error < 1e-8
    detail = f"mlp {r_mlp.max_rel_error:.1e} (m={r_mlp.num_params}), cnn {r_cnn.max_rel_error:.1e} (m={r_cnn.num_params}), quadratic {r_quad.max_rel_error:.1e}"
    assert criterion("4 gradient correctness", ok, detail)


def test_5_probability_field(criterion):
    model = build_small_cnn((1, 8, 8), [4], 10)
    g = np.random.default_rng(3).normal(size=model.num_params) * np.repeat(np.arange(1, 7), model.group_sizes)
    checks = {}
    # (a) standardization within each group
    local = update_probabilities(g, model, ProbabilityConfig("local"))
    stats = compute_group_stats(g, model)
    dev = []
    for gi, grp in enumerate(model.groups):
        if stats.std[gi] > 0:
            v = local.v[grp.offset : grp.stop]
            dev.append(max(abs(v.mean()), abs(v.std() - 1)))
    checks["a"] = max(dev) < 1e-9
    # (b) no slope, no offset
    flat = update_probabilities(g, model, ProbabilityConfig("combined", alpha=0.0, lam=0.0))
    checks["b"] = bool(np.all(flat.p == 0.5))
    # (c) global scheme is constant per group
    glob = update_probabilities(g, model, ProbabilityConfig("global"))
    checks["c"] = all(np.ptp(glob.p[grp.offset : grp.stop]) == 0 for grp in model.groups)
    # (d) combined reductions, bitwise
    c_local = update_probabilities(g, model, ProbabilityConfig("combined", alpha=0.1, lam=0.0))
    c_glob = update_probabilities(g, model, ProbabilityConfig("combined", alpha=0.0, lam=-4.0))
    checks["d"] = np.array_equal(c_local.p, local.p) and np.array_equal(c_glob.p, glob.p)
    # (e) v = 0, mu_tilde = 1 under alpha = 0.1, lambda = -4
    two = update_probabilities(np.array([2.0, 0.0]), [0, 1], ProbabilityConfig("combined", 0.1, -4.0))
    err = abs(two.p[0] - 1 / (1 + math.exp(4)))
    checks["e"] = two.v[0] == 0 and two.mu_tilde[0] == 1 and err <= 1e-12
    ok = all(checks.values())
    assert criterion("5 probability field", ok, " ".join(f"({k}){'ok' if v else 'FAIL'}" for k, v in checks.items()) + f" e-err {err:.1e}")


def test_6_bernoulli_statistics(criterion):
    chi = sample_indicators(np.full(100_000, 0.5), np.random.default_rng(11))
    freq_err = abs(chi.mean() - 0.5)
    # per-parameter counts along a real training run under the combined scheme
    ds = make_blobs(400, 2, 2, 3.0, 0)
    model = build_mlp(2, [8], 2)
    store = model.init_params(seed=0)
    opt = StochasticBatchSGD(model, ProbabilityConfig("combined", 0.1, -4.0), np.random.default_rng(12))
    opt.trace = []
    hits, mean, var = np.zeros(42), np.zeros(42), np.zeros(42)
    it, epoch = 0, 0
    while it < 10_000:
        for idx in plan_epoch(len(ds), 16, 1, epoch):
            _, g = loss_and_grad(model, store, ds.inputs[idx], ds.labels[idx])
            opt.step(store.data, g, 0.05, len(idx))
            store.touch()
            p = opt.last_field.p
            hits += opt.trace[-1][1]
            mean += p
            var += p * (1 - p)
            it += 1
            if it == 10_000:
                break
        opt.trace.clear()
        opt.epoch_reset()
        epoch += 1
    z = np.abs(hits - mean) / np.sqrt(var)
    ok = freq_err <= 0.00474 and bool(np.all(z <= 3))
    assert criterion("6 bernoulli statistics", ok,
                     f"|freq-0.5|={freq_err:.5f}; per-parameter max z={z.max():.2f} over {it} iterations, p in [{mean.min()/it:.3f}, {mean.max()/it:.3f}]")


def test_7_lr_schedules(criterion):
    exp = LrSchedule("exponential", lr_init=0.1, decay_power=0.05)
    exp_err = max(abs(exp(e, 100) - 0.1 * math.exp(-0.05 * e)) for e in range(101))
    stair = LrSchedule("staircase", lr_init=0.1, milestones=(0.5, 0.75))
    stair_ok = (
        all(stair(e, 100) == 0.1 for e in range(50))
        and all(stair(e, 100) == 0.1 * 0.1 for e in range(50, 75))
        and all(stair(e, 100) == 0.1 * 0.1 * 0.1 for e in range(75, 101))
        and stair(49.999, 100) == 0.1
    )
    sig = LrSchedule("sigmoid", lr_init=0.1, lr_final=0.001)
    mid_err = abs(sig(15, 30) - (0.1 + 0.001) / 2)
    tol = 1e-3 * (0.1 - 0.001)
    end_err = max(abs(sig(0, 30) - 0.1), abs(sig(30, 30) - 0.001))
    ok = exp_err <= 1e-15 and stair_ok and mid_err <= 1e-12 and end_err <= tol
    assert criterion("7 lr schedules", ok,
                     f"exp err {exp_err:.1e}, staircase {'ok' if stair_ok else 'FAIL'}, mid err {mid_err:.1e}, end err {end_err:.2e} (tol {tol:.2e})")


def test_8_determinism(criterion, tmp_path):
    digests = []
    for run in ("first", "second"):
        out = tmp_path / run
        subprocess.run(
            [sys.executable, "-m", "stochbatch.cli", "run", "--config", str(ROOT / "configs" / "tiny.ini"),
             "--seed", "42", "--out", str(out)],
            check=True, capture_output=True,
        )
        digests.append(hashlib.sha256((out / "metrics.jsonl").read_bytes()).hexdigest())
    assert criterion("8 determinism", digests[0] == digests[1], f"sha256 {digests[0][:16]} / {digests[1][:16]}")


@pytest.mark.slow
def test_9_generalization_trend(criterion):
    start = time.perf_counter()
    verdicts = []
    for name, cfg in (("blobs", blobs_config()), ("digits", digits_config())):
        rows = run_trend(cfg)
        not_worse, monotone = check_trend(rows)
        verdicts.append((not_worse, monotone))
        print(f"{name}\n{format_rows(rows)}")
        criterion(f"9 trend ({name})", not_worse and monotone,
                  f"SBS >= SGD-0.5 at every fraction: {not_worse}; gain non-decreasing: {monotone}; "
                  f"gains {[round(r.gain, 2) for r in rows]}")
    elapsed = time.perf_counter() - start
    ok = all(a and b for a, b in verdicts) and elapsed <= 15 * 60
    assert criterion("9 generalization trend", ok, f"{elapsed:.0f}s total")


def test_10_epoch_reset(criterion, monkeypatch):
    from stochbatch import harness

    real = harness.build_optimizer

    def traced(*args, **kw):
        opt = real(*args, **kw)
        opt.trace = []
        return opt

    monkeypatch.setattr(harness, "build_optimizer", traced)
    base = BLOBS_282.replace(epochs=4)
    worst, boundaries, violations = 0, 0, []

    def hook(event, optimizer, plan, t=None, **info):
        nonlocal worst, boundaries
        batches, st = len(plan), optimizer.state
        if event == "step":
            used = optimizer.trace.pop()[0]  # k values folded and applied at this step
            worst = max(worst, int(used.max()))
            if used.max() > batches:
                violations.append(f"k used {used.max()} > {batches}")
            if t < batches - 1 and st.k.max() > batches:
                violations.append(f"state k {st.k.max()} > {batches} mid-epoch")
        else:
            boundaries += 1
            if not (np.all(st.g_tilde == 0) and np.all(st.k == 1)):
                violations.append(f"no reset at end of epoch {info['epoch']}")

    for spec in (OptimizerSpec(kind="sbs", scheme="constant", constant_p=0.05), OptimizerSpec(kind="sbs")):
        cfg = base.replace(optimizer=spec)
        train, val = build_datasets(cfg)
        run_trial(cfg, 0, train, val, hook)
    T = math.ceil(300 / base.batch_size)
    assert criterion("10 epoch reset", not violations and 0 < worst <= T and boundaries == 8,
                     f"max k used {worst} (batches per epoch {T}), {boundaries} boundaries checked; violations {violations[:3]}")
