"""Acceptance gate: one test per criterion, `pytest -v` shows one
pass/fail line each.

Criteria 6-8 run real searches and dominate the runtime; the whole
file takes around ten minutes on a laptop-class machine.
"""
import random
import time

import numpy as np

from evotir.datasets import DatasetConfig
from evotir.fitness import (WEIGHT_NAMES, WorkloadConfig, build_2fcnet_text,
                            build_2fcnet_workload, build_prediction_workload,
                            evaluate, gradient_scaling_patch, init_weights)
from evotir.genome import (apply_patch, crossover_once,
                           default_child_validity, mutate)
from evotir.interpreter import TensorValue, eval_op, interpret
from evotir.ir import OPCODES, structurally_equal
from evotir.parser import parse_module
from evotir.printer import print_module
from evotir.search import (SearchConfig, crowding_distance,
                           nondominated_sort, run_search)
from evotir.verifier import verify_module

from opgen import agree, make_case, to_reference
from reference import ref_crowding, ref_eval, ref_fronts
from test_ir_parse_print import AFFINE, IDENTITY, KITCHEN_SINK


def test_criterion_1_interpreter_matches_oracle():
    """Every opcode agrees with a naive nested-loop evaluator on 200
    random cases (extents <= 5): exact for i32/i1, 1e-6 relative for
    f32. Under 30 seconds."""
    started = time.time()
    for opcode in sorted(OPCODES):
        rng = random.Random(f"accept-{opcode}")
        for i in range(200):
            op, operands = make_case(opcode, rng)
            got = eval_op(op, operands)
            want = ref_eval(**to_reference(op, operands))
            flat = [v.item() for v in got.data.reshape(-1)]
            assert agree(flat, want, got.type.kind.value, tol=1e-6), \
                f"{opcode} case {i}: attrs {op.attrs}"
    assert time.time() - started < 30


def test_criterion_2_backward_matches_finite_differences():
    """The gradient recovered from one SGD step, g = (w - w') / lr,
    matches central finite differences of the module's own loss
    function on a fixed 8-example batch within 1e-3 relative error,
    over at most 2000 sampled weight coordinates. Under 60 seconds."""
    started = time.time()
    cfg = WorkloadConfig(batch_size=8,
                         dataset=DatasetConfig(search_n=64, holdout_n=64))
    w = build_2fcnet_workload(cfg)
    x, y, _ = w.search_batches[0]
    weights = init_weights(cfg)

    def wrap_args(fn_name, arrays):
        fn = w.module.functions[fn_name]
        return [TensorValue.wrap(ty, a)
                for (_, ty), a in zip(fn.params, arrays)]

    step_in = wrap_args("train_step",
                        [weights[n] for n in WEIGHT_NAMES] + [x, y])
    updated, _ = interpret(w.module, "train_step", step_in)
    grads = {n: (weights[n] - tv.data) / cfg.learning_rate
             for n, tv in zip(WEIGHT_NAMES, updated)}

    def loss_at(ws):
        args = wrap_args("loss", [ws[n] for n in WEIGHT_NAMES] + [x, y])
        out, _ = interpret(w.module, "loss", args)
        return float(out[0].data)

    rng = random.Random(20260825)
    coords = [(n, idx) for n in ("b1", "b2", "w2")
              for idx in np.ndindex(weights[n].shape)]
    w1_all = list(np.ndindex(weights["w1"].shape))
    coords += [("w1", idx) for idx in rng.sample(w1_all, 1600)]
    assert len(coords) <= 2000

    eps = 1e-5
    for name, idx in coords:
        lo = {k: v.copy() for k, v in weights.items()}
        hi = {k: v.copy() for k, v in weights.items()}
        lo[name][idx] -= eps
        hi[name][idx] += eps
        fd = (loss_at(hi) - loss_at(lo)) / (2 * eps)
        g = grads[name][idx]
        assert abs(fd - g) <= 1e-3 * max(abs(fd), abs(g), 1e-6), \
            f"{name}{idx}: fd {fd} vs step gradient {g}"
    assert time.time() - started < 60


def test_criterion_3_accepted_mutations_are_clean():
    """1000 accepted mutations on the training module all produce
    variants that re-verify cleanly and survive a smoke execution.
    100 percent, no tolerance. Under 5 minutes."""
    started = time.time()
    w = build_2fcnet_workload(WorkloadConfig())
    rng = random.Random(3)
    for i in range(1000):
        edit = mutate(w.module, rng, functions=w.mutable_functions,
                      smoke=w.smoke)
        result = apply_patch(w.module, (edit,))
        assert verify_module(result.module).ok, f"mutation {i}"
        assert w.smoke(result.module), f"mutation {i}"
    assert time.time() - started < 300


def test_criterion_4_crossover_first_attempt_validity():
    """Over 200 single-shot recombinations of random valid parents,
    at least half the children apply, verify, and smoke on the first
    attempt. Under 5 minutes."""
    started = time.time()
    w = build_2fcnet_workload(WorkloadConfig())
    rng = random.Random(4)
    validity = default_child_validity(w.module, w.smoke)
    parents = []
    for _ in range(40):
        patch = ()
        for _ in range(3):
            variant = apply_patch(w.module, patch).module
            patch = patch + (mutate(variant, rng,
                                    functions=w.mutable_functions,
                                    smoke=w.smoke),)
        parents.append(patch)
    assert all(validity(p) for p in parents)

    valid = total = 0
    for _ in range(200):
        a, b = rng.sample(parents, 2)
        for child in crossover_once(a, b, rng):
            total += 1
            valid += validity(child)
    assert valid / total >= 0.5, f"validity {valid}/{total}"
    assert time.time() - started < 300


def test_criterion_5_selection_matches_brute_force():
    """Non-dominated fronts and crowding distances on 50 random
    100-point populations equal a brute-force restatement exactly.
    Under 30 seconds."""
    started = time.time()
    rng = random.Random(20260825)
    for trial in range(50):
        pts = []
        for _ in range(100):
            if rng.random() < 0.5:  # grid half forces duplicates
                pts.append((float(rng.randrange(12)),
                            float(rng.randrange(12))))
            else:
                pts.append((rng.uniform(0, 12), rng.uniform(0, 12)))
        fronts = nondominated_sort(pts)
        assert fronts == ref_fronts(pts), f"trial {trial}"
        for front in fronts:
            assert crowding_distance(pts, front) == \
                ref_crowding(pts, front), f"trial {trial}"
    assert time.time() - started < 30


def test_criterion_6_gradient_scaling_patch_direction():
    """The hand-built gradient-scaling patch lowers training error
    versus baseline, and raising the learning rate from 0.01 to 0.3
    moves error in the same direction. Direction only. Under 10
    minutes."""
    started = time.time()
    w = build_2fcnet_workload(WorkloadConfig())
    base = evaluate(w.module, (), w)
    patched = evaluate(w.module, gradient_scaling_patch(w), w)
    assert patched.valid and np.isfinite(patched.cost)
    assert patched.error < base.error

    hot = build_2fcnet_workload(WorkloadConfig(learning_rate=0.3))
    hot_base = evaluate(hot.module, (), hot)
    # both interventions improve: the patch acts like a larger step size
    assert hot_base.error < base.error
    assert time.time() - started < 600


def test_criterion_7_search_finds_pareto_improvements():
    """Across 5 seeds at population 64 for 20 generations on the
    1000-example split, the median run's archive holds a point that
    (a) cuts error by at least 1 absolute point at no extra cost, or
    (b) cuts cost by at least 20 percent within +2 points of error.
    Checked as: at least 3 of the 5 runs succeed."""
    started = time.time()
    hits = 0
    for seed in range(5):
        w = build_2fcnet_workload(WorkloadConfig())
        result = run_search(w, SearchConfig(seed=seed))
        b = result.baseline
        ok = any(
            (e.fitness.error <= b.error - 0.01
             and e.fitness.cost <= b.cost)
            or (e.fitness.cost <= 0.8 * b.cost
                and e.fitness.error <= b.error + 0.02)
            for e in result.archive)
        hits += ok
    assert hits >= 3, f"only {hits}/5 seeds produced an improvement"
    assert time.time() - started < 7200


def test_criterion_8_equal_seeds_bitwise_identical(tmp_path):
    """Two equal-seed searches write byte-identical archive.json."""
    cfg = SearchConfig(population=16, generations=5, elites=4, seed=11)
    outs = []
    for name in ("a", "b"):
        w = build_2fcnet_workload(WorkloadConfig())
        out = tmp_path / name
        run_search(w, cfg, out_dir=str(out))
        outs.append((out / "archive.json").read_bytes())
    assert outs[0] == outs[1]
    assert b'"entries"' in outs[0]


def test_criterion_9_corpus_round_trips():
    """Parse/print identity over the whole textual corpus, including
    the full training module. Under 5 seconds."""
    started = time.time()
    cfg = WorkloadConfig()
    train_text = build_2fcnet_text(cfg, init_weights(cfg))
    predict = build_prediction_workload(WorkloadConfig(
        steps=30, dataset=DatasetConfig(search_n=192, holdout_n=64)))
    corpus = [IDENTITY, AFFINE, KITCHEN_SINK, train_text,
              print_module(predict.module)]
    for text in corpus:
        m = parse_module(text)
        printed = print_module(m)
        assert printed == text
        assert structurally_equal(parse_module(printed), m)
    assert time.time() - started < 5
