"""Workloads and fitness evaluation.

A workload bundles a pristine module, its dataset splits, and the
evaluation protocol. Fitness has two minimized objectives:

* cost: static execution cost. Training mode charges per-step cost times
  the step budget; prediction mode charges the forward cost times the
  number of evaluated batches.
* error: 1 - accuracy on the search split. Training mode first trains the
  variant's train_step from a fixed-seed initialization, then measures
  misclassification with the variant's forward. Any non-finite weights or
  predictions pin error to 1.0 (the variant stays cost-comparable).

Patches that fail to apply or verify are invalid: (inf, inf, valid=False).
The holdout split is never read during search; holdout_report retrains
from the same fixed seed and tests on it afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset, DatasetConfig, load_dataset
from .genome import (Binding, CopyEdit, Patch, PatchApplicationError, Rewire,
                     apply_patch, synthesize_resize)
from .interpreter import CostModel, get_plan
from .ir import Module
from .parser import parse_module
from .printer import _format_scalar  # reused for embedding literals
from .ir import ElementKind


class WorkloadError(Exception):
    pass


@dataclass(frozen=True)
class Fitness:
    cost: float
    error: float
    valid: bool = True

    def as_tuple(self) -> tuple[float, float]:
        return (self.cost, self.error)


INVALID_FITNESS = Fitness(float("inf"), float("inf"), valid=False)

TRAINING = "training"
PREDICTION = "prediction"

WEIGHT_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class WorkloadConfig:
    features: int = 784
    hidden: int = 32
    classes: int = 10
    batch_size: int = 32
    steps: int = 600
    learning_rate: float = 0.01
    init_seed: int = 1234
    finite_check_every: int = 50
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    cost_table: dict = field(default_factory=dict)
    weights_path: str | None = None


@dataclass
class Workload:
    name: str
    mode: str
    module: Module
    mutable_functions: list[str]
    dataset: Dataset
    config: WorkloadConfig
    cost_model: CostModel
    search_batches: list = field(default_factory=list)

    def smoke(self, module: Module) -> bool:
        """One cheap execution of the entry function; True if it runs."""
        try:
            if self.mode == TRAINING:
                plan = get_plan(module.functions["train_step"],
                                self.cost_model)
                xb, yb, _ = self.search_batches[0]
                plan.run(self._initial_weights(module) + [xb, yb])
            else:
                plan = get_plan(module.functions["forward"], self.cost_model)
                xb, _, _ = self.search_batches[0]
                plan.run(self._initial_weights(module) + [xb])
            return True
        except Exception:
            return False

    def _initial_weights(self, module: Module) -> list[np.ndarray]:
        return [module.constants[n].value for n in WEIGHT_NAMES]


# ---------------------------------------------------------------------------
# Module construction
# ---------------------------------------------------------------------------

def _dense_1d(vec: np.ndarray) -> str:
    return "[" + ", ".join(_format_scalar(v, ElementKind.f32)
                           for v in vec) + "]"


def _dense_2d(mat: np.ndarray) -> str:
    return "[" + ", ".join(_dense_1d(row) for row in mat) + "]"


def _forward_ops(b, d, h, c) -> str:
    """Shared forward pass: affine, ReLU, affine, softmax."""
    return f"""\
  %0 = dot %x, %w1 : tensor<{b}x{h}xf32>
  %1 = broadcast_in_dim %b1 {{dims = [1]}} : tensor<{b}x{h}xf32>
  %2 = add %0, %1 : tensor<{b}x{h}xf32>
  %3 = constant dense<0.0> : tensor<f32>
  %4 = broadcast_in_dim %3 {{dims = []}} : tensor<{b}x{h}xf32>
  %5 = maximum %2, %4 : tensor<{b}x{h}xf32>
  %6 = dot %5, %w2 : tensor<{b}x{c}xf32>
  %7 = broadcast_in_dim %b2 {{dims = [1]}} : tensor<{b}x{c}xf32>
  %8 = add %6, %7 : tensor<{b}x{c}xf32>
  %9 = reduce %8 {{axis = 1, kind = max}} : tensor<{b}xf32>
  %10 = broadcast_in_dim %9 {{dims = [0]}} : tensor<{b}x{c}xf32>
  %11 = subtract %8, %10 : tensor<{b}x{c}xf32>
  %12 = exponential %11 : tensor<{b}x{c}xf32>
  %13 = reduce %12 {{axis = 1, kind = sum}} : tensor<{b}xf32>
  %14 = broadcast_in_dim %13 {{dims = [0]}} : tensor<{b}x{c}xf32>
  %15 = divide %12, %14 : tensor<{b}x{c}xf32>"""


def _weight_params(d, h, c) -> str:
    return (f"%w1: tensor<{d}x{h}xf32>, %b1: tensor<{h}xf32>, "
            f"%w2: tensor<{h}x{c}xf32>, %b2: tensor<{c}xf32>")


def build_2fcnet_text(config: WorkloadConfig,
                      weights: dict[str, np.ndarray]) -> str:
    """Textual module for the two-layer training workload: @forward,
    @train_step (SGD with mini-batch averaging and the learning-rate
    constant embedded), and @loss (mean cross-entropy) for diagnostics."""
    b, d = config.batch_size, config.features
    h, c = config.hidden, config.classes
    inv_b = _format_scalar(1.0 / b, ElementKind.f32)
    lr = _format_scalar(config.learning_rate, ElementKind.f32)
    params = _weight_params(d, h, c)
    fwd = _forward_ops(b, d, h, c)

    globals_text = "\n".join([
        f"global @w1 = dense<{_dense_2d(weights['w1'])}> : tensor<{d}x{h}xf32>",
        f"global @b1 = dense<{_dense_1d(weights['b1'])}> : tensor<{h}xf32>",
        f"global @w2 = dense<{_dense_2d(weights['w2'])}> : tensor<{h}x{c}xf32>",
        f"global @b2 = dense<{_dense_1d(weights['b2'])}> : tensor<{c}xf32>",
    ])

    forward = f"""\
func @forward({params}, %x: tensor<{b}x{d}xf32>) -> tensor<{b}x{c}xf32> {{
{fwd}
  return %15 : tensor<{b}x{c}xf32>
}}"""

    train_step = f"""\
func @train_step({params}, %x: tensor<{b}x{d}xf32>, %y: tensor<{b}x{c}xf32>) \
-> (tensor<{d}x{h}xf32>, tensor<{h}xf32>, tensor<{h}x{c}xf32>, tensor<{c}xf32>) {{
{fwd}
  %16 = subtract %15, %y : tensor<{b}x{c}xf32>
  %17 = constant dense<{inv_b}> : tensor<f32>
  %18 = broadcast_in_dim %17 {{dims = []}} : tensor<{b}x{c}xf32>
  %19 = multiply %16, %18 : tensor<{b}x{c}xf32>
  %20 = transpose %5 {{perm = [1, 0]}} : tensor<{h}x{b}xf32>
  %21 = dot %20, %19 : tensor<{h}x{c}xf32>
  %22 = reduce %19 {{axis = 0, kind = sum}} : tensor<{c}xf32>
  %23 = transpose %w2 {{perm = [1, 0]}} : tensor<{c}x{h}xf32>
  %24 = dot %19, %23 : tensor<{b}x{h}xf32>
  %25 = compare %2, %4 {{kind = gt}} : tensor<{b}x{h}xi1>
  %26 = select %25, %24, %4 : tensor<{b}x{h}xf32>
  %27 = transpose %x {{perm = [1, 0]}} : tensor<{d}x{b}xf32>
  %28 = dot %27, %26 : tensor<{d}x{h}xf32>
  %29 = reduce %26 {{axis = 0, kind = sum}} : tensor<{h}xf32>
  %30 = constant dense<{lr}> : tensor<f32>
  %31 = broadcast_in_dim %30 {{dims = []}} : tensor<{d}x{h}xf32>
  %32 = multiply %28, %31 : tensor<{d}x{h}xf32>
  %33 = subtract %w1, %32 : tensor<{d}x{h}xf32>
  %34 = broadcast_in_dim %30 {{dims = []}} : tensor<{h}xf32>
  %35 = multiply %29, %34 : tensor<{h}xf32>
  %36 = subtract %b1, %35 : tensor<{h}xf32>
  %37 = broadcast_in_dim %30 {{dims = []}} : tensor<{h}x{c}xf32>
  %38 = multiply %21, %37 : tensor<{h}x{c}xf32>
  %39 = subtract %w2, %38 : tensor<{h}x{c}xf32>
  %40 = broadcast_in_dim %30 {{dims = []}} : tensor<{c}xf32>
  %41 = multiply %22, %40 : tensor<{c}xf32>
  %42 = subtract %b2, %41 : tensor<{c}xf32>
  return %33, %36, %39, %42 : tensor<{d}x{h}xf32>, tensor<{h}xf32>, \
tensor<{h}x{c}xf32>, tensor<{c}xf32>
}}"""

    loss = f"""\
func @loss({params}, %x: tensor<{b}x{d}xf32>, %y: tensor<{b}x{c}xf32>) \
-> tensor<f32> {{
{fwd}
  %16 = log %15 : tensor<{b}x{c}xf32>
  %17 = multiply %y, %16 : tensor<{b}x{c}xf32>
  %18 = reduce %17 {{axis = 1, kind = sum}} : tensor<{b}xf32>
  %19 = reduce %18 {{axis = 0, kind = sum}} : tensor<f32>
  %20 = negate %19 : tensor<f32>
  %21 = constant dense<{inv_b}> : tensor<f32>
  %22 = multiply %20, %21 : tensor<f32>
  return %22 : tensor<f32>
}}"""

    return "\n".join([globals_text, "", forward, "", train_step, "", loss, ""])


def init_weights(config: WorkloadConfig) -> dict[str, np.ndarray]:
    """Fixed-seed uniform [-0.05, 0.05] initialization."""
    rng = np.random.default_rng(config.init_seed)
    d, h, c = config.features, config.hidden, config.classes
    return {
        "w1": rng.uniform(-0.05, 0.05, size=(d, h)),
        "b1": rng.uniform(-0.05, 0.05, size=(h,)),
        "w2": rng.uniform(-0.05, 0.05, size=(h, c)),
        "b2": rng.uniform(-0.05, 0.05, size=(c,)),
    }


def build_2fcnet_workload(config: WorkloadConfig | None = None) -> Workload:
    """Training workload: evolve @forward and @train_step of a two-layer
    network trained by mini-batch SGD on the search split."""
    config = config or WorkloadConfig()
    dataset = load_dataset(config.dataset)
    weights = init_weights(config)
    module = parse_module(build_2fcnet_text(config, weights))
    w = Workload(name="train2fc", mode=TRAINING, module=module,
                 mutable_functions=["forward", "train_step"],
                 dataset=dataset, config=config,
                 cost_model=CostModel(dict(config.cost_table)))
    w.search_batches = dataset.search.whole_batches(
        config.batch_size, config.classes)
    if not w.search_batches:
        raise WorkloadError("search split smaller than one batch")
    return w


def build_prediction_workload(config: WorkloadConfig | None = None) -> Workload:
    """Prediction workload: evolve @forward of the frozen, pretrained
    network; cost is forward cost times the number of evaluated batches.

    Weights come from config.weights_path (.npz with w1/b1/w2/b2) or, when
    no path is configured, from training the 2fcNet workload once at its
    default budget and freezing the result.
    """
    config = config or WorkloadConfig()
    if config.weights_path is not None:
        try:
            archive = np.load(config.weights_path)
        except OSError as e:
            raise WorkloadError(
                f"weights file not found: {config.weights_path}") from e
        weights = {n: np.asarray(archive[n], dtype=np.float64)
                   for n in WEIGHT_NAMES}
    else:
        trainer = build_2fcnet_workload(config)
        final = _run_training(trainer, trainer.module)
        if final is None:
            raise WorkloadError("baseline training diverged; cannot freeze")
        weights = dict(zip(WEIGHT_NAMES, final))

    b, d = config.batch_size, config.features
    h, c = config.hidden, config.classes
    text = "\n".join([
        f"global @w1 = dense<{_dense_2d(weights['w1'])}> : tensor<{d}x{h}xf32>",
        f"global @b1 = dense<{_dense_1d(weights['b1'])}> : tensor<{h}xf32>",
        f"global @w2 = dense<{_dense_2d(weights['w2'])}> : tensor<{h}x{c}xf32>",
        f"global @b2 = dense<{_dense_1d(weights['b2'])}> : tensor<{c}xf32>",
        "",
        f"""func @forward({_weight_params(d, h, c)}, %x: tensor<{b}x{d}xf32>) \
-> tensor<{b}x{c}xf32> {{
{_forward_ops(b, d, h, c)}
  return %15 : tensor<{b}x{c}xf32>
}}""",
        "",
    ])
    dataset = load_dataset(config.dataset)
    w = Workload(name="predict2fc", mode=PREDICTION,
                 module=parse_module(text), mutable_functions=["forward"],
                 dataset=dataset, config=config,
                 cost_model=CostModel(dict(config.cost_table)))
    w.search_batches = dataset.search.whole_batches(
        config.batch_size, config.classes)
    if not w.search_batches:
        raise WorkloadError("search split smaller than one batch")
    return w


def gradient_scaling_patch(w: Workload) -> Patch:
    """Hand-written single-copy patch that rescales the weight gradients.

    It duplicates the broadcast that spreads the softmax row max, binds
    its operand to the label batch squeezed down to one label row and
    padded with ones, and wires the result in place of the 1/batch
    averaging factor. The gradient then sums over most examples instead
    of averaging, which behaves like a much larger learning rate.
    """
    fn = w.module.functions["train_step"]
    defs = {op.result: op for op in fn.ops}

    def defined_by(value, opcode):
        op = defs.get(value)
        return op is not None and op.opcode == opcode

    src = next(op for op in fn.ops
               if op.opcode == "broadcast_in_dim"
               and defined_by(op.operands[0], "reduce")
               and defs[op.operands[0]].attrs["kind"] == "max")
    scale = next(op for op in fn.ops
                 if op.opcode == "multiply"
                 and defined_by(op.operands[0], "subtract")
                 and defined_by(op.operands[1], "broadcast_in_dim")
                 and defined_by(defs[op.operands[1]].operands[0], "constant"))
    label_type = dict(fn.params)["%y"]
    operand_type = defs[src.operands[0]].result_type
    edit = CopyEdit(
        uid="badc0ffee0", function=fn.name, source=src.op_id,
        index=fn.ops.index(scale),
        operands=(Binding("%y", synthesize_resize(label_type, operand_type)),),
        rewire=Rewire(scale.op_id, 1, ()))
    return (edit,)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _run_training(w: Workload, module: Module) -> list[np.ndarray] | None:
    """Run the step budget; returns final weights or None on blow-up."""
    plan = get_plan(module.functions["train_step"], w.cost_model)
    weights = [module.constants[n].value for n in WEIGHT_NAMES]
    batches = w.search_batches
    check = max(1, w.config.finite_check_every)
    for step in range(w.config.steps):
        xb, yb, _ = batches[step % len(batches)]
        weights = plan.run(weights + [xb, yb])
        if (step + 1) % check == 0:
            if not all(np.all(np.isfinite(a)) for a in weights):
                return None
    if not all(np.all(np.isfinite(a)) for a in weights):
        return None
    return weights


def _misclassification(w: Workload, module: Module,
                       weights: list[np.ndarray], batches) -> float:
    """Error rate of @forward over whole batches; 1.0 on non-finite
    output."""
    plan = get_plan(module.functions["forward"], w.cost_model)
    wrong = 0
    total = 0
    for xb, _, lb in batches:
        (probs,) = plan.run(weights + [xb])
        if not np.all(np.isfinite(probs)):
            return 1.0
        pred = np.argmax(probs, axis=1)
        wrong += int(np.sum(pred != lb))
        total += len(lb)
    return wrong / total


def evaluate(original: Module, patch: Patch, w: Workload) -> Fitness:
    """Fitness of original+patch. Deterministic in (patch, workload)."""
    try:
        variant = apply_patch(original, patch).module
    except PatchApplicationError:
        return INVALID_FITNESS
    try:
        if w.mode == TRAINING:
            cost = get_plan(variant.functions["train_step"],
                            w.cost_model).total_cost * w.config.steps
            weights = _run_training(w, variant)
            if weights is None:
                return Fitness(cost, 1.0)
            error = _misclassification(w, variant, weights, w.search_batches)
        else:
            plan = get_plan(variant.functions["forward"], w.cost_model)
            cost = plan.total_cost * len(w.search_batches)
            weights = [variant.constants[n].value for n in WEIGHT_NAMES]
            error = _misclassification(w, variant, weights, w.search_batches)
    except Exception:
        return INVALID_FITNESS
    return Fitness(cost, error)


def holdout_report(original: Module, patch: Patch, w: Workload) -> Fitness:
    """Post-search generalization check on the holdout split.

    Training mode retrains from the fixed seed on the search split, then
    measures misclassification on holdout. Prediction mode runs forward
    on holdout. This is the only reader of the holdout split.
    """
    try:
        variant = apply_patch(original, patch).module
    except PatchApplicationError:
        return INVALID_FITNESS
    holdout_batches = w.dataset.holdout.whole_batches(
        w.config.batch_size, w.config.classes)
    if not holdout_batches:
        raise WorkloadError("holdout split smaller than one batch")
    try:
        if w.mode == TRAINING:
            cost = get_plan(variant.functions["train_step"],
                            w.cost_model).total_cost * w.config.steps
            weights = _run_training(w, variant)
            if weights is None:
                return Fitness(cost, 1.0)
            error = _misclassification(w, variant, weights, holdout_batches)
        else:
            plan = get_plan(variant.functions["forward"], w.cost_model)
            cost = plan.total_cost * len(holdout_batches)
            weights = [variant.constants[n].value for n in WEIGHT_NAMES]
            error = _misclassification(w, variant, weights, holdout_batches)
    except Exception:
        return INVALID_FITNESS
    return Fitness(cost, error)
