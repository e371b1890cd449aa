"""Random well-typed op cases for interpreter testing.

Each case is (operation, operand values); generation is seeded per
opcode so unit tests and the full acceptance sweep draw the same
deterministic streams.
"""
import random

import numpy as np

from evotir.ir import (COMPARE_KINDS, ElementKind, Operation, REDUCE_KINDS,
                       TensorType, infer_result_type)
from evotir.interpreter import TensorValue

NUMERIC = (ElementKind.f32, ElementKind.i32)
ALL_KINDS = (ElementKind.f32, ElementKind.i32, ElementKind.i1)

MAX_EXTENT = 5
MAX_RANK = 3


def random_shape(rng, min_rank=0, max_rank=MAX_RANK):
    rank = rng.randint(min_rank, max_rank)
    return tuple(rng.randint(1, MAX_EXTENT) for _ in range(rank))


def random_value(ty: TensorType, rng) -> TensorValue:
    n = ty.count
    if ty.kind == ElementKind.f32:
        flat = [rng.uniform(-4.0, 4.0) for _ in range(n)]
    elif ty.kind == ElementKind.i32:
        flat = [rng.randint(-20, 20) for _ in range(n)]
    else:
        flat = [rng.random() < 0.5 for _ in range(n)]
    data = np.array(flat, dtype=ty.kind.dtype).reshape(ty.shape)
    return TensorValue(ty, data)


def _build(opcode, operand_types, attrs, declared, rng):
    result_type = infer_result_type(opcode, tuple(operand_types), attrs,
                                    declared)
    operands = [random_value(t, rng) for t in operand_types]
    op = Operation(op_id="t0", opcode=opcode, result="%t",
                   result_type=result_type,
                   operands=tuple(f"%a{i}" for i in range(len(operands))),
                   attrs=attrs)
    return op, operands


def make_case(opcode: str, rng: random.Random):
    """One random valid (Operation, operand TensorValues) pair."""
    if opcode == "constant":
        kind = rng.choice(ALL_KINDS)
        ty = TensorType(random_shape(rng), kind)
        value = random_value(ty, rng).data
        return _build(opcode, (), {"value": value}, ty, rng)

    if opcode in ("add", "subtract", "multiply", "divide", "maximum"):
        ty = TensorType(random_shape(rng), rng.choice(NUMERIC))
        return _build(opcode, (ty, ty), {}, None, rng)

    if opcode == "negate":
        ty = TensorType(random_shape(rng), rng.choice(NUMERIC))
        return _build(opcode, (ty,), {}, None, rng)

    if opcode in ("exponential", "log"):
        ty = TensorType(random_shape(rng), ElementKind.f32)
        return _build(opcode, (ty,), {}, None, rng)

    if opcode == "dot":
        kind = rng.choice(NUMERIC)
        m, k, n = (rng.randint(1, MAX_EXTENT) for _ in range(3))
        return _build(opcode, (TensorType((m, k), kind),
                               TensorType((k, n), kind)), {}, None, rng)

    if opcode == "transpose":
        ty = TensorType(random_shape(rng, min_rank=1),
                        rng.choice(ALL_KINDS))
        perm = list(range(ty.rank))
        rng.shuffle(perm)
        return _build(opcode, (ty,), {"perm": tuple(perm)}, None, rng)

    if opcode == "reshape":
        src = random_shape(rng, min_rank=1)
        dst = list(src)
        rng.shuffle(dst)
        kind = rng.choice(ALL_KINDS)
        return _build(opcode, (TensorType(src, kind),), {},
                      TensorType(tuple(dst), kind), rng)

    if opcode == "broadcast_in_dim":
        kind = rng.choice(ALL_KINDS)
        dst = random_shape(rng, min_rank=1)
        axes = sorted(rng.sample(range(len(dst)),
                                 rng.randint(0, len(dst))))
        src = tuple(dst[d] if rng.random() < 0.7 else 1 for d in axes)
        return _build(opcode, (TensorType(src, kind),),
                      {"dims": tuple(axes)}, TensorType(dst, kind), rng)

    if opcode == "reduce":
        ty = TensorType(random_shape(rng, min_rank=1), rng.choice(NUMERIC))
        attrs = {"axis": rng.randrange(ty.rank),
                 "kind": rng.choice(sorted(REDUCE_KINDS))}
        return _build(opcode, (ty,), attrs, None, rng)

    if opcode == "pad":
        kind = rng.choice(ALL_KINDS)
        ty = TensorType(random_shape(rng, min_rank=1), kind)
        low = tuple(rng.randint(0, 2) for _ in range(ty.rank))
        high = tuple(rng.randint(0, 2) for _ in range(ty.rank))
        return _build(opcode, (ty, TensorType((), kind)),
                      {"low": low, "high": high}, None, rng)

    if opcode == "slice":
        kind = rng.choice(ALL_KINDS)
        ty = TensorType(random_shape(rng, min_rank=1), kind)
        start, limit = [], []
        for d in ty.shape:
            s = rng.randrange(d)
            start.append(s)
            limit.append(rng.randint(s + 1, d))
        return _build(opcode, (ty,),
                      {"start": tuple(start), "limit": tuple(limit)},
                      None, rng)

    if opcode == "compare":
        ty = TensorType(random_shape(rng), rng.choice(ALL_KINDS))
        return _build(opcode, (ty, ty),
                      {"kind": rng.choice(sorted(COMPARE_KINDS))}, None, rng)

    if opcode == "select":
        ty = TensorType(random_shape(rng), rng.choice(ALL_KINDS))
        pred = TensorType(ty.shape, ElementKind.i1)
        return _build(opcode, (pred, ty, ty), {}, None, rng)

    if opcode == "iota":
        ty = TensorType(random_shape(rng, min_rank=1), rng.choice(NUMERIC))
        return _build(opcode, (), {"dim": rng.randrange(ty.rank)}, ty, rng)

    if opcode == "convert":
        src_kind = rng.choice(ALL_KINDS)
        dst_kind = rng.choice(ALL_KINDS)
        shape = random_shape(rng)
        return _build(opcode, (TensorType(shape, src_kind),), {},
                      TensorType(shape, dst_kind), rng)

    raise AssertionError(f"no generator for opcode {opcode}")


def to_reference(op: Operation, operands):
    """Translate a case into plain-Python arguments for the oracle."""
    attrs = {}
    for k, v in op.attrs.items():
        if isinstance(v, np.ndarray):
            attrs[k] = v.tolist()
        else:
            attrs[k] = v
    flat_operands = [[x.item() for x in tv.data.reshape(-1)]
                     for tv in operands]
    operand_shapes = [tv.type.shape for tv in operands]
    operand_kinds = [tv.type.kind.value for tv in operands]
    return dict(opcode=op.opcode, operands=flat_operands,
                operand_shapes=operand_shapes,
                result_shape=op.result_type.shape, attrs=attrs,
                operand_kinds=operand_kinds,
                result_kind=op.result_type.kind.value)


def agree(actual, expected, kind: str, tol: float = 1e-6) -> bool:
    """Elementwise agreement; NaNs match NaNs, ints must be exact."""
    if len(actual) != len(expected):
        return False
    for a, e in zip(actual, expected):
        if kind == "f32":
            a, e = float(a), float(e)
            if a != a or e != e:
                if (a != a) != (e != e):
                    return False
                continue
            if abs(a - e) > tol * max(1.0, abs(e)):
                return False
        else:
            if a != e:
                return False
    return True
