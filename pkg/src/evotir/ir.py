"""Core data model for a miniature SSA tensor dialect.

Modules hold named constant tensors and straight-line functions. Every
operation produces exactly one result value and carries a stable op_id that
transformations preserve; freshly inserted operations get fresh ids.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class IRError(Exception):
    """Malformed IR construction or type inference failure."""


class ElementKind(enum.Enum):
    f32 = "f32"
    i32 = "i32"
    i1 = "i1"

    def __str__(self) -> str:
        return self.value

    @property
    def dtype(self):
        """Runtime dtype. f32 is computed in double precision internally."""
        return _DTYPES[self]


_DTYPES = {
    ElementKind.f32: np.float64,
    ElementKind.i32: np.int64,
    ElementKind.i1: np.bool_,
}

NUMERIC_KINDS = (ElementKind.f32, ElementKind.i32)


@dataclass(frozen=True)
class TensorType:
    """Shaped tensor type. An empty shape is a scalar. Extents are >= 1.

    Types compare structurally; tensors of different sizes are different
    types.
    """

    shape: tuple[int, ...]
    kind: ElementKind

    def __post_init__(self):
        if any(d < 1 for d in self.shape):
            raise IRError(f"tensor extents must be >= 1, got {self.shape}")

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def count(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    def __str__(self) -> str:
        dims = "".join(f"{d}x" for d in self.shape)
        return f"tensor<{dims}{self.kind}>"


# ValueIds are plain strings of the form "%name". Parameters conventionally
# use "%arg0" style and results "%0" style, but any identifier is legal.
ValueId = str


@dataclass(eq=False)
class Operation:
    """One SSA operation: a single typed result, operands, and attributes."""

    op_id: str
    opcode: str
    result: ValueId
    result_type: TensorType
    operands: tuple[ValueId, ...] = ()
    attrs: dict = field(default_factory=dict)

    def clone(self, *, op_id: str | None = None, result: ValueId | None = None,
              operands: tuple[ValueId, ...] | None = None) -> "Operation":
        return Operation(
            op_id=self.op_id if op_id is None else op_id,
            opcode=self.opcode,
            result=self.result if result is None else result,
            result_type=self.result_type,
            operands=tuple(self.operands) if operands is None else tuple(operands),
            attrs=dict(self.attrs),
        )


@dataclass(eq=False)
class FunctionBody:
    """Straight-line function: parameters, an op list, and typed returns.

    SSA holds by construction of the verifier: each value is assigned once
    and every use is dominated by its definition (definition index precedes
    use index; parameters dominate everything).
    """

    name: str
    params: tuple[tuple[ValueId, TensorType], ...]
    ops: list[Operation]
    returns: tuple[ValueId, ...]
    return_types: tuple[TensorType, ...]


@dataclass(eq=False)
class Global:
    """Named module-level constant tensor (weights and the like)."""

    name: str
    type: TensorType
    value: np.ndarray


@dataclass(eq=False)
class Module:
    functions: dict[str, FunctionBody]
    constants: dict[str, Global] = field(default_factory=dict)

    def fresh_op_id_base(self) -> int:
        return sum(len(f.ops) for f in self.functions.values())


# ---------------------------------------------------------------------------
# Opcode signatures and result-type inference
# ---------------------------------------------------------------------------

COMPARE_KINDS = ("eq", "ne", "lt", "le", "gt", "ge")
REDUCE_KINDS = ("sum", "max")

# opcode -> (operand count, attribute names in print order)
OPCODES: dict[str, tuple[int, tuple[str, ...]]] = {
    "constant": (0, ("value",)),
    "add": (2, ()),
    "subtract": (2, ()),
    "multiply": (2, ()),
    "divide": (2, ()),
    "maximum": (2, ()),
    "negate": (1, ()),
    "exponential": (1, ()),
    "log": (1, ()),
    "dot": (2, ()),
    "transpose": (1, ("perm",)),
    "reshape": (1, ()),
    "broadcast_in_dim": (1, ("dims",)),
    "reduce": (1, ("axis", "kind")),
    "pad": (2, ("low", "high")),
    "slice": (1, ("start", "limit")),
    "compare": (2, ("kind",)),
    "select": (3, ()),
    "iota": (0, ("dim",)),
    "convert": (1, ()),
}


def _want(cond: bool, msg: str):
    if not cond:
        raise IRError(msg)


def infer_result_type(opcode: str, operand_types: tuple[TensorType, ...],
                      attrs: dict, declared: TensorType) -> TensorType:
    """Result type of an op, or raise IRError when the op is ill-typed.

    `declared` is consulted only by opcodes whose result shape is not
    determined by the operands (constant, reshape, broadcast_in_dim, iota,
    convert).
    """
    if opcode not in OPCODES:
        raise IRError(f"unknown opcode '{opcode}'")
    arity, _ = OPCODES[opcode]
    _want(len(operand_types) == arity,
          f"{opcode} expects {arity} operands, got {len(operand_types)}")

    if opcode == "constant":
        value = attrs.get("value")
        _want(isinstance(value, np.ndarray), "constant needs a dense value")
        _want(tuple(value.shape) == declared.shape,
              f"constant literal shape {tuple(value.shape)} does not match "
              f"declared {declared.shape}")
        return declared

    if opcode in ("add", "subtract", "multiply", "divide", "maximum"):
        a, b = operand_types
        _want(a == b, f"{opcode} operands must have identical type, "
                      f"got {a} and {b}")
        _want(a.kind in NUMERIC_KINDS, f"{opcode} requires f32 or i32")
        return a

    if opcode == "negate":
        (a,) = operand_types
        _want(a.kind in NUMERIC_KINDS, "negate requires f32 or i32")
        return a

    if opcode in ("exponential", "log"):
        (a,) = operand_types
        _want(a.kind == ElementKind.f32, f"{opcode} requires f32")
        return a

    if opcode == "dot":
        a, b = operand_types
        _want(a.rank == 2 and b.rank == 2, "dot operands must be rank 2")
        _want(a.kind == b.kind and a.kind in NUMERIC_KINDS,
              "dot operands must share a numeric element kind")
        _want(a.shape[1] == b.shape[0],
              f"dot contraction mismatch: {a} . {b}")
        return TensorType((a.shape[0], b.shape[1]), a.kind)

    if opcode == "transpose":
        (a,) = operand_types
        perm = attrs.get("perm")
        _want(isinstance(perm, tuple) and sorted(perm) == list(range(a.rank)),
              f"transpose perm must be a permutation of 0..{a.rank - 1}")
        return TensorType(tuple(a.shape[p] for p in perm), a.kind)

    if opcode == "reshape":
        (a,) = operand_types
        _want(a.kind == declared.kind, "reshape cannot change element kind")
        _want(a.count == declared.count,
              f"reshape must preserve element count: {a} -> {declared}")
        return declared

    if opcode == "broadcast_in_dim":
        (a,) = operand_types
        dims = attrs.get("dims")
        _want(isinstance(dims, tuple) and len(dims) == a.rank,
              "broadcast_in_dim dims must map every source dimension")
        _want(all(0 <= d < declared.rank for d in dims) and
              list(dims) == sorted(set(dims)),
              "broadcast_in_dim dims must be strictly increasing result axes")
        _want(a.kind == declared.kind,
              "broadcast_in_dim cannot change element kind")
        for i, d in enumerate(dims):
            _want(a.shape[i] in (1, declared.shape[d]),
                  f"broadcast_in_dim source dim {i} (extent {a.shape[i]}) "
                  f"incompatible with result dim {d} "
                  f"(extent {declared.shape[d]})")
        return declared

    if opcode == "reduce":
        (a,) = operand_types
        axis = attrs.get("axis")
        kind = attrs.get("kind")
        _want(isinstance(axis, int) and 0 <= axis < a.rank,
              f"reduce axis out of range for rank {a.rank}")
        _want(kind in REDUCE_KINDS, f"reduce kind must be one of {REDUCE_KINDS}")
        _want(a.kind in NUMERIC_KINDS, "reduce requires f32 or i32")
        return TensorType(a.shape[:axis] + a.shape[axis + 1:], a.kind)

    if opcode == "pad":
        a, pv = operand_types
        low, high = attrs.get("low"), attrs.get("high")
        _want(isinstance(low, tuple) and isinstance(high, tuple) and
              len(low) == a.rank and len(high) == a.rank,
              "pad low/high must list every dimension")
        _want(all(x >= 0 for x in low + high), "pad amounts must be >= 0")
        _want(pv.rank == 0 and pv.kind == a.kind,
              "pad value must be a scalar of the input element kind")
        return TensorType(tuple(d + l + h for d, l, h
                                in zip(a.shape, low, high)), a.kind)

    if opcode == "slice":
        (a,) = operand_types
        start, limit = attrs.get("start"), attrs.get("limit")
        _want(isinstance(start, tuple) and isinstance(limit, tuple) and
              len(start) == a.rank and len(limit) == a.rank,
              "slice start/limit must list every dimension")
        for d, (s, l) in enumerate(zip(start, limit)):
            _want(0 <= s < l <= a.shape[d],
                  f"slice window [{s}, {l}) invalid for dim {d} "
                  f"of extent {a.shape[d]}")
        return TensorType(tuple(l - s for s, l in zip(start, limit)), a.kind)

    if opcode == "compare":
        a, b = operand_types
        _want(a == b, "compare operands must have identical type")
        _want(attrs.get("kind") in COMPARE_KINDS,
              f"compare kind must be one of {COMPARE_KINDS}")
        return TensorType(a.shape, ElementKind.i1)

    if opcode == "select":
        pred, t, f = operand_types
        _want(pred.kind == ElementKind.i1, "select predicate must be i1")
        _want(t == f, "select branches must have identical type")
        _want(pred.shape == t.shape,
              "select predicate shape must match the branches")
        return t

    if opcode == "iota":
        dim = attrs.get("dim")
        _want(isinstance(dim, int) and 0 <= dim < declared.rank,
              f"iota dim out of range for rank {declared.rank}")
        _want(declared.kind in NUMERIC_KINDS, "iota requires f32 or i32")
        return declared

    if opcode == "convert":
        (a,) = operand_types
        _want(a.shape == declared.shape, "convert cannot change shape")
        return declared

    raise IRError(f"unhandled opcode '{opcode}'")  # pragma: no cover


# ---------------------------------------------------------------------------
# Structural equality (op_ids are ignored; names, types and attrs matter)
# ---------------------------------------------------------------------------

def _attrs_equal(a: dict, b: dict) -> bool:
    if a.keys() != b.keys():
        return False
    for k in a:
        x, y = a[k], b[k]
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if not (isinstance(x, np.ndarray) and isinstance(y, np.ndarray)
                    and x.shape == y.shape and _arrays_equal(x, y)):
                return False
        elif x != y:
            return False
    return True


def _arrays_equal(x: np.ndarray, y: np.ndarray) -> bool:
    # NaN payloads compare equal; equal_nan is illegal for bool arrays
    if x.dtype.kind == "f" and y.dtype.kind == "f":
        return np.array_equal(x, y, equal_nan=True)
    return np.array_equal(x, y)


def ops_equal(a: Operation, b: Operation) -> bool:
    return (a.opcode == b.opcode and a.result == b.result
            and a.result_type == b.result_type and a.operands == b.operands
            and _attrs_equal(a.attrs, b.attrs))


def structurally_equal(m1: Module, m2: Module) -> bool:
    """Equality of everything except op_id values."""
    if list(m1.constants) != list(m2.constants):
        return False
    for name in m1.constants:
        g1, g2 = m1.constants[name], m2.constants[name]
        if g1.type != g2.type or not _arrays_equal(g1.value, g2.value):
            return False
    if list(m1.functions) != list(m2.functions):
        return False
    for name in m1.functions:
        f1, f2 = m1.functions[name], m2.functions[name]
        if (f1.params != f2.params or f1.returns != f2.returns
                or f1.return_types != f2.return_types
                or len(f1.ops) != len(f2.ops)):
            return False
        if not all(ops_equal(a, b) for a, b in zip(f1.ops, f2.ops)):
            return False
    return True
