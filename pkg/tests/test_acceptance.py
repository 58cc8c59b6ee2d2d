"""Acceptance gate: one test per shipped guarantee, one printed line each.

Criteria 1-4 run the built-in verification suites and then re-check the
same law through an independent second route, so a bug in the suite cannot
vouch for itself. Criteria 5-7 are the training-capacity guarantees
(tuned step budgets; see the runtime bounds asserted inline). Criterion 8
is bit-identical determinism through the CLI, and criterion 9 proves the
installed artifact can self-check.

Run with plain pytest; the PASS/FAIL lines print even with capture on.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from evsr.augment import SELECTED_POOL, AugmentSpec, augment
from evsr.cli import main as cli_main
from evsr.events import (EventStream, WindowPolicy, downsample_stream,
                         stack_count_image)
from evsr.model import (ModelConfig, ffm_forward, init_params, variant_config)
from evsr.rng import derive_seed, make_rng
from evsr.tensor import Tensor, mse, mul, sum_all
from evsr.toydata import ToySceneSpec
from evsr.train import TrainConfig, TrainItem, evaluate, make_toy_items, train
from evsr.verify import (suite_augmentation, suite_conservation,
                         suite_formula_oracles, suite_gradcheck)

OVERFIT_STEPS = 400          # budget allows up to 1000
BASELINE_PHASES = 4          # warm-restarted training phases per scale
BASELINE_PHASE_STEPS = 1000  # both scales together must fit in 30 min
VARIANT_STEPS = 200
VARIANT_SEED = 0


def report(num: int, name: str, ok: bool, detail: str, capsys) -> None:
    with capsys.disabled():
        print(f"\nacceptance {num} {name}: {'PASS' if ok else 'FAIL'} ({detail})")


def random_stream(seed: int, n: int = 400, w: int = 24, h: int = 18) -> EventStream:
    rng = np.random.default_rng(seed)
    return EventStream(rng.integers(0, w, size=n), rng.integers(0, h, size=n),
                       np.sort(rng.integers(0, 50_000, size=n)),
                       rng.choice([-1, 1], size=n), w, h)


def toy_training_set(factor: int, n_train: int, n_held: int, windows_per_item: int):
    """Toy sequence sources sized so every item fills the sequence length."""
    scene = ToySceneSpec(width=16, height=16, duration_us=60_000, seed=10)
    probe = make_toy_items(n_train, factor, scene, WindowPolicy.fixed_count(1),
                           seed=10)
    lo = min(len(it.stream) for it in probe)
    policy = WindowPolicy.fixed_count(max(4, lo // windows_per_item))
    items = make_toy_items(n_train, factor, scene, policy, seed=10)
    held = make_toy_items(n_held, factor, scene, policy, seed=99)
    return items, held


# -- 1: gradient correctness ------------------------------------------------------


def test_acceptance_1_gradient_correctness(capsys):
    t0 = time.perf_counter()
    suite = suite_gradcheck(threshold_op=1e-4, threshold_full=1e-3)
    elapsed = time.perf_counter() - t0

    # independent route: exact closed-form gradients, no finite differences
    x = Tensor(np.array([0.7, -1.3, 2.1]), dtype=np.float64, requires_grad=True)
    sum_all(mul(x, x)).backward()
    exact_square = np.array_equal(x.grad, 2.0 * x.data)
    a = Tensor(np.array([1.0, 2.0]), dtype=np.float64, requires_grad=True)
    b = Tensor(np.array([0.5, -0.5]), dtype=np.float64)
    mse(a, b).backward()
    exact_mse = np.allclose(a.grad, 2.0 * (a.data - b.data) / 2.0,
                            rtol=0, atol=0)

    ok = suite.passed and elapsed < 120.0 and exact_square and exact_mse
    report(1, "gradient correctness", ok,
           f"{len(suite.details)} checks, closed-form laws exact, "
           f"{elapsed:.1f}s < 120s", capsys)
    assert suite.passed, suite.details
    assert elapsed < 120.0
    assert exact_square and exact_mse


# -- 2: formula oracles -----------------------------------------------------------


def test_acceptance_2_formula_oracles(capsys):
    t0 = time.perf_counter()
    suite = suite_formula_oracles(tol=1e-6)
    elapsed = time.perf_counter() - t0

    # independent route: the fusion module collapses to an exact identity
    # map when every parameter is zero (gate 0.5 times a zero fusion path)
    cfg = ModelConfig(channels=6, num_blocks=1, attn_ratio=0.5)
    params = init_params(cfg, seed=3, dtype=np.float64)
    for t in params.tensors.values():
        t.data[...] = 0.0
    rng = np.random.default_rng(0)
    f_branch = Tensor(rng.normal(size=(6, 5, 4)), dtype=np.float64)
    f_enh = Tensor(rng.normal(size=(6, 5, 4)), dtype=np.float64)
    out = ffm_forward(f_branch, f_enh, params, "pos", training=True)
    passthrough = np.array_equal(out.data, f_branch.data)

    ok = suite.passed and passthrough
    report(2, "formula oracles", ok,
           f"{len(suite.details)} transcriptions at 1e-6, zero-parameter "
           f"passthrough exact, {elapsed:.1f}s", capsys)
    assert suite.passed, suite.details
    assert passthrough


# -- 3: representation conservation ------------------------------------------------


def test_acceptance_3_representation_invariants(capsys):
    t0 = time.perf_counter()
    suite = suite_conservation(cases=1000)
    elapsed = time.perf_counter() - t0

    # independent route: brute-force per-event histogram and a reshape-based
    # block sum, written with none of the library's counting code
    stream = random_stream(123, n=600, w=24, h=16)
    brute = np.zeros((16, 24), dtype=np.int64)
    for x, y in zip(stream.xs, stream.ys):
        brute[y, x] += 1
    hist_ok = np.array_equal(stack_count_image(stream, "all").counts, brute)
    small = downsample_stream(stream, 4)
    blocks = brute.reshape(4, 4, 6, 4).sum(axis=(1, 3))
    block_ok = np.array_equal(stack_count_image(small, "all").counts, blocks)

    ok = suite.passed and hist_ok and block_ok
    report(3, "representation invariants", ok,
           f"1000 randomized cases per law, brute-force routes exact, "
           f"{elapsed:.1f}s", capsys)
    assert suite.passed, suite.details
    assert hist_ok and block_ok


# -- 4: augmentation laws -----------------------------------------------------------


def test_acceptance_4_augmentation_laws(capsys):
    t0 = time.perf_counter()
    suite = suite_augmentation(freq_seeds=10000)
    elapsed_suite = time.perf_counter() - t0

    # route 2a: frequencies over the same 10k seeds, counted by replaying
    # the selector draw here rather than trusting the suite's bookkeeping
    counts = {name: 0 for name in SELECTED_POOL}
    for seed in range(10000):
        rng = make_rng(seed, "augment.selected_da")
        counts[SELECTED_POOL[int(rng.integers(0, len(SELECTED_POOL)))]] += 1
    freqs = {n: c / 10000.0 for n, c in counts.items()}
    freq_ok = all(0.22 <= f <= 0.28 for f in freqs.values())

    # route 2b: behavioral cross-check on a seed subsample; whenever the
    # output is distinguishable, it must equal the replayed method's output
    stream = random_stream(7, n=350)
    behave_ok = True
    for seed in range(1500):
        spec = AugmentSpec(method="selected_da", seed=seed)
        got = augment(stream, spec)
        inner = derive_seed(seed, "augment.selected_da.inner")
        matches = []
        for name in SELECTED_POOL:
            cand = augment(stream, AugmentSpec(method=name, seed=inner))
            same = (len(cand) == len(got)
                    and np.array_equal(cand.ts, got.ts)
                    and np.array_equal(cand.xs, got.xs)
                    and np.array_equal(cand.ys, got.ys)
                    and np.array_equal(cand.ps, got.ps))
            matches.append(same)
        rng = make_rng(seed, "augment.selected_da")
        drawn = int(rng.integers(0, len(SELECTED_POOL)))
        if not matches[drawn]:
            behave_ok = False
            break

    ok = suite.passed and freq_ok and behave_ok
    fs = " ".join(f"{n}={freqs[n]:.3f}" for n in SELECTED_POOL)
    report(4, "augmentation laws", ok,
           f"{fs} in [0.22,0.28], 1500-seed behavioral replay consistent, "
           f"{elapsed_suite:.1f}s", capsys)
    assert suite.passed, suite.details
    assert freq_ok, freqs
    assert behave_ok


# -- 5: overfit capacity -------------------------------------------------------------


def test_acceptance_5_overfit_capacity(capsys):
    t0 = time.perf_counter()
    mc = ModelConfig(scale=2, channels=16, num_blocks=2)
    scene = ToySceneSpec(width=16, height=16, duration_us=60_000, seed=1)
    probe = make_toy_items(1, 2, scene, WindowPolicy.fixed_count(1), seed=1)
    stream = probe[0].stream
    item = TrainItem(stream=stream, factor=2,
                     policy=WindowPolicy.fixed_count(max(4, len(stream) // 10)))
    cfg = TrainConfig(learning_rate=3e-3, steps=OVERFIT_STEPS,
                      sequence_length=9, seed=0)
    result = train([item], mc, cfg)
    elapsed = time.perf_counter() - t0
    ratio = result.losses[-1] / result.losses[0]
    ok = OVERFIT_STEPS <= 1000 and ratio < 0.10 and elapsed < 600.0
    report(5, "overfit capacity", ok,
           f"C=16 B=2 r=2 T=9, {OVERFIT_STEPS} steps, final/initial "
           f"{ratio:.4f} < 0.10, {elapsed:.0f}s < 600s", capsys)
    assert ratio < 0.10, (result.losses[0], result.losses[-1])
    assert elapsed < 600.0


# -- 6: beat the bicubic baseline ------------------------------------------------------


def test_acceptance_6_beats_bicubic_baseline(capsys):
    """Training runs in warm-restarted phases: the optimizer's moment
    estimates are reset every 1000 steps by resuming train() from the
    previous phase's parameters. The resets act like a step-size restart
    schedule and fit this dataset several times faster than one
    continuous run (which still trails bicubic after 6000 steps here).
    """
    t0 = time.perf_counter()
    outcome = {}
    for r in (2, 4):
        mc = ModelConfig(scale=r, channels=16, num_blocks=2)
        items, held = toy_training_set(r, n_train=32, n_held=8,
                                       windows_per_item=7)
        params = None
        for _ in range(BASELINE_PHASES):
            cfg = TrainConfig(learning_rate=3e-3, steps=BASELINE_PHASE_STEPS,
                              sequence_length=6, seed=0)
            result = train(items, mc, cfg, params=params)
            params = result.params
        rep = evaluate(params, mc, held, sequence_length=6)
        outcome[r] = rep.per_scale[r]
    elapsed = time.perf_counter() - t0
    wins = {r: e["model_mse"] < e["bicubic_mse"] for r, e in outcome.items()}
    ok = all(wins.values()) and elapsed < 1800.0
    detail = "; ".join(
        f"r={r} model {e['model_mse']:.3e} vs bicubic {e['bicubic_mse']:.3e}"
        for r, e in outcome.items())
    report(6, "beats bicubic on held-out scenes", ok,
           f"32 train / 8 held-out, {detail}, {elapsed:.0f}s < 1800s", capsys)
    assert wins[2] and wins[4], outcome
    assert elapsed < 1800.0


# -- 7: ablation ordering ---------------------------------------------------------------


def test_acceptance_7_variant_ordering(capsys):
    t0 = time.perf_counter()
    items, _ = toy_training_set(2, n_train=32, n_held=1, windows_per_item=7)
    base = ModelConfig(scale=2, channels=16, num_blocks=2)
    finals = {}
    for name in "ABCDE":
        mc = variant_config(name, base)
        cfg = TrainConfig(learning_rate=3e-3, steps=VARIANT_STEPS,
                          sequence_length=6, seed=VARIANT_SEED)
        result = train(items, mc, cfg)  # NumericalError would fail the test
        finals[name] = result.losses[-1]
    elapsed = time.perf_counter() - t0
    finite = all(np.isfinite(v) for v in finals.values())
    ordered = finals["E"] <= finals["A"]
    ok = finite and ordered
    losses = " ".join(f"#{n}={finals[n]:.3e}" for n in "ABCDE")
    report(7, "ablation ordering smoke test", ok,
           f"{VARIANT_STEPS} steps each, {losses}, "
           f"E<=A {ordered}, {elapsed:.0f}s", capsys)
    assert finite, finals
    assert ordered, finals


# -- 8: determinism -----------------------------------------------------------------------


def test_acceptance_8_bitwise_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    opts = ["--opt", "scene.width=16", "--opt", "scene.height=16",
            "--opt", "scene.duration_us=30000",
            "--opt", "data.window_count=64", "--opt", "data.train_items=4",
            "--opt", "train.sequence_length=4", "--opt", "train.steps=40",
            "--opt", "model.channels=8", "--opt", "model.num_blocks=1",
            "--seed", "21"]
    blobs = []
    for run in ("one", "two"):
        ck = tmp_path / f"{run}.rmf1"
        log = tmp_path / f"{run}.log"
        rc = cli_main(["train", "--checkpoint", str(ck), "--log", str(log),
                       "--quiet", *opts])
        assert rc == 0
        blobs.append((ck.read_bytes(), log.read_bytes()))
    elapsed = time.perf_counter() - t0
    same_ckpt = blobs[0][0] == blobs[1][0]
    same_log = blobs[0][1] == blobs[1][1]
    ok = same_ckpt and same_log
    report(8, "bit-identical determinism", ok,
           f"checkpoint {len(blobs[0][0])} bytes equal {same_ckpt}, "
           f"loss log equal {same_log}, {elapsed:.0f}s", capsys)
    assert same_ckpt and same_log


# -- 9: self-check subcommand ----------------------------------------------------------------


def test_acceptance_9_verify_subcommand(capsys):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "evsr.cli", "verify"],
                          capture_output=True, text=True, timeout=1200)
    elapsed = time.perf_counter() - t0
    ok = proc.returncode == 0 and "verify: all suites passed" in proc.stdout
    suites = [l for l in proc.stdout.splitlines() if l.startswith("suite=")]
    report(9, "verify subcommand", ok,
           f"exit {proc.returncode}, {len(suites)} suites, {elapsed:.0f}s",
           capsys)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "verify: all suites passed" in proc.stdout
    assert len(suites) == 4
