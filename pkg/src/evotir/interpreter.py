"""Reference interpreter and cost model for the tensor dialect.

Execution is deterministic. Floating point follows IEEE rules: division by
zero yields inf, NaN propagates, and nothing raises. Integer division is
truncation toward zero with x/0 defined as 0. f32 tensors are computed in
double precision internally; the type system still calls them f32.

Functions are compiled once into a flat slot-indexed plan that is cached on
the FunctionBody, so repeated execution (training loops) stays cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ir import ElementKind, FunctionBody, Module, Operation, TensorType


class InterpreterError(Exception):
    """Bad entry name, input arity/type mismatch, or malformed op."""


@dataclass
class TensorValue:
    """A runtime tensor: its type plus a row-major data buffer."""

    type: TensorType
    data: np.ndarray

    @classmethod
    def wrap(cls, ty: TensorType, data) -> "TensorValue":
        arr = np.asarray(data, dtype=ty.kind.dtype).reshape(ty.shape)
        return cls(ty, arr)

    @property
    def flat(self) -> np.ndarray:
        return np.ascontiguousarray(self.data).reshape(-1)


@dataclass
class CostModel:
    """Per-opcode unit costs. An op costs unit x output element count,
    except dot (m*n*k) and reduce (input element count)."""

    table: dict[str, float] = field(default_factory=dict)

    def unit(self, opcode: str) -> float:
        return self.table.get(opcode, 1.0)

    def op_cost(self, op: Operation,
                operand_types: tuple[TensorType, ...]) -> float:
        u = self.unit(op.opcode)
        if op.opcode == "dot":
            a, b = operand_types
            return u * a.shape[0] * b.shape[1] * a.shape[1]
        if op.opcode == "reduce":
            return u * operand_types[0].count
        return u * op.result_type.count


DEFAULT_COST_MODEL = CostModel()


def _int_divide(a, b):
    # trunc toward zero, x/0 == 0
    safe = np.where(b != 0, b, 1)
    q = np.trunc(np.true_divide(a, safe))
    return np.where(b != 0, q, 0).astype(np.int64)


_COMPARES = {
    "eq": np.equal, "ne": np.not_equal, "lt": np.less, "le": np.less_equal,
    "gt": np.greater, "ge": np.greater_equal,
}


def _compile_kernel(op: Operation, operand_types: tuple[TensorType, ...],
                    slots: tuple[int, ...]):
    """Build a closure evaluating one op against the value slot list."""
    code = op.opcode
    ty = op.result_type

    if code == "constant":
        arr = np.asarray(op.attrs["value"], dtype=ty.kind.dtype)
        arr = arr.reshape(ty.shape)
        arr.flags.writeable = False
        return lambda v: arr

    if code in ("add", "subtract", "multiply", "maximum"):
        fn = {"add": np.add, "subtract": np.subtract,
              "multiply": np.multiply, "maximum": np.maximum}[code]
        i, j = slots
        return lambda v: fn(v[i], v[j])

    if code == "divide":
        i, j = slots
        if ty.kind == ElementKind.i32:
            return lambda v: _int_divide(v[i], v[j])
        return lambda v: np.true_divide(v[i], v[j])

    if code == "negate":
        (i,) = slots
        return lambda v: np.negative(v[i])

    if code == "exponential":
        (i,) = slots
        return lambda v: np.exp(v[i])

    if code == "log":
        (i,) = slots
        return lambda v: np.log(v[i])

    if code == "dot":
        i, j = slots
        return lambda v: v[i] @ v[j]

    if code == "transpose":
        (i,) = slots
        perm = op.attrs["perm"]
        return lambda v: np.transpose(v[i], perm)

    if code == "reshape":
        (i,) = slots
        shape = ty.shape
        return lambda v: np.reshape(v[i], shape)

    if code == "broadcast_in_dim":
        (i,) = slots
        dims = op.attrs["dims"]
        shape = ty.shape
        mid = [1] * len(shape)
        for src_dim, dst_dim in enumerate(dims):
            mid[dst_dim] = operand_types[0].shape[src_dim]
        mid_t = tuple(mid)
        return lambda v: np.broadcast_to(np.reshape(v[i], mid_t), shape)

    if code == "reduce":
        (i,) = slots
        axis = op.attrs["axis"]
        fn = np.sum if op.attrs["kind"] == "sum" else np.max
        return lambda v: fn(v[i], axis=axis)

    if code == "pad":
        i, j = slots
        width = tuple(zip(op.attrs["low"], op.attrs["high"]))
        return lambda v: np.pad(v[i], width, constant_values=v[j][()])

    if code == "slice":
        (i,) = slots
        window = tuple(slice(s, l) for s, l
                       in zip(op.attrs["start"], op.attrs["limit"]))
        return lambda v: v[i][window]

    if code == "compare":
        i, j = slots
        fn = _COMPARES[op.attrs["kind"]]
        return lambda v: fn(v[i], v[j])

    if code == "select":
        p, t, f = slots
        return lambda v: np.where(v[p], v[t], v[f])

    if code == "iota":
        dim = op.attrs["dim"]
        shape = ty.shape
        ramp = np.arange(shape[dim], dtype=ty.kind.dtype)
        mid = [1] * len(shape)
        mid[dim] = shape[dim]
        arr = np.ascontiguousarray(
            np.broadcast_to(ramp.reshape(mid), shape))
        arr.flags.writeable = False
        return lambda v: arr

    if code == "convert":
        (i,) = slots
        dtype = ty.kind.dtype
        if ty.kind == ElementKind.i1:
            return lambda v: v[i] != 0
        if ty.kind == ElementKind.i32:
            return lambda v: np.trunc(v[i]).astype(dtype) \
                if v[i].dtype.kind == "f" else v[i].astype(dtype)
        return lambda v: v[i].astype(dtype)

    raise InterpreterError(f"cannot compile opcode '{code}'")


class ExecPlan:
    """Slot-compiled form of one function for a fixed cost model."""

    def __init__(self, fn: FunctionBody, cost_model: CostModel):
        slot_of: dict[str, int] = {}
        for k, (name, _) in enumerate(fn.params):
            slot_of[name] = k
        types: dict[str, TensorType] = {n: t for n, t in fn.params}
        self.steps = []
        self.total_cost = 0.0
        for op in fn.ops:
            try:
                operand_types = tuple(types[v] for v in op.operands)
                operand_slots = tuple(slot_of[v] for v in op.operands)
            except KeyError as e:
                raise InterpreterError(
                    f"op {op.op_id} uses undefined value {e.args[0]}") from e
            kernel = _compile_kernel(op, operand_types, operand_slots)
            slot_of[op.result] = len(slot_of)
            types[op.result] = op.result_type
            self.steps.append(kernel)
            self.total_cost += cost_model.op_cost(op, operand_types)
        try:
            self.return_slots = tuple(slot_of[v] for v in fn.returns)
        except KeyError as e:
            raise InterpreterError(
                f"return of undefined value {e.args[0]}") from e
        self.n_params = len(fn.params)
        self.param_types = tuple(t for _, t in fn.params)
        self.return_types = fn.return_types

    def run(self, args: list[np.ndarray]) -> list[np.ndarray]:
        values = list(args)
        append = values.append
        with np.errstate(all="ignore"):
            for kernel in self.steps:
                append(kernel(values))
        return [values[s] for s in self.return_slots]


def get_plan(fn: FunctionBody, cost_model: CostModel | None = None) -> ExecPlan:
    model = cost_model or DEFAULT_COST_MODEL
    key = tuple(sorted(model.table.items()))
    cache = getattr(fn, "_plans", None)
    if cache is None:
        cache = {}
        fn._plans = cache
    plan = cache.get(key)
    if plan is None:
        plan = ExecPlan(fn, model)
        cache[key] = plan
    return plan


def _entry(m: Module, entry: str) -> FunctionBody:
    if entry not in m.functions:
        raise InterpreterError(f"no function @{entry} in module")
    return m.functions[entry]


def interpret(m: Module, entry: str, inputs: list[TensorValue],
              cost_model: CostModel | None = None
              ) -> tuple[list[TensorValue], float]:
    """Execute @entry on the given inputs. Returns (outputs, cost).

    Cost depends only on the op sequence and shapes, never on data.
    """
    fn = _entry(m, entry)
    plan = get_plan(fn, cost_model)
    if len(inputs) != plan.n_params:
        raise InterpreterError(
            f"@{entry} takes {plan.n_params} inputs, got {len(inputs)}")
    args = []
    for tv, want in zip(inputs, plan.param_types):
        if tv.type != want:
            raise InterpreterError(
                f"input type {tv.type} does not match parameter {want}")
        args.append(np.asarray(tv.data, dtype=want.kind.dtype))
    outs = plan.run(args)
    wrapped = [TensorValue(ty, np.asarray(a, dtype=ty.kind.dtype))
               for ty, a in zip(plan.return_types, outs)]
    return wrapped, plan.total_cost


def eval_op(op: Operation, operands: list[TensorValue]) -> TensorValue:
    """Evaluate a single op outside any function context."""
    operand_types = tuple(tv.type for tv in operands)
    kernel = _compile_kernel(op, operand_types,
                             tuple(range(len(operands))))
    with np.errstate(all="ignore"):
        out = kernel([np.asarray(tv.data, dtype=tv.type.kind.dtype)
                      for tv in operands])
    return TensorValue(op.result_type,
                       np.asarray(out, dtype=op.result_type.kind.dtype))


def cost_of(m: Module, entry: str,
            cost_model: CostModel | None = None) -> float:
    """Static cost of @entry; equals interpret's reported cost."""
    return get_plan(_entry(m, entry), cost_model).total_cost
