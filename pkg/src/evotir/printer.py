"""Deterministic textual printer for the tensor dialect.

print_module is byte-deterministic: equal modules (structurally) print to
identical text, and parse(print(m)) is structurally equal to m.
"""
from __future__ import annotations

import numpy as np

from .ir import ElementKind, FunctionBody, Global, Module, OPCODES, Operation


def _format_scalar(x, kind: ElementKind) -> str:
    if kind == ElementKind.i1:
        return "true" if bool(x) else "false"
    if kind == ElementKind.i32:
        return str(int(x))
    v = float(x)
    if v != v:
        return "nan"
    if v == float("inf"):
        return "inf"
    if v == float("-inf"):
        return "-inf"
    return repr(v)


def _format_dense(value: np.ndarray, kind: ElementKind) -> str:
    def rec(a):
        if a.ndim == 0:
            return _format_scalar(a[()], kind)
        return "[" + ", ".join(rec(x) for x in a) + "]"

    return f"dense<{rec(np.asarray(value))}>"


def _format_attr(value) -> str:
    if isinstance(value, tuple):
        return "[" + ", ".join(str(int(v)) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _format_op(op: Operation) -> str:
    if op.opcode == "constant":
        lit = _format_dense(op.attrs["value"], op.result_type.kind)
        return f"  {op.result} = constant {lit} : {op.result_type}"
    parts = [f"  {op.result} = {op.opcode}"]
    if op.operands:
        parts.append(" " + ", ".join(op.operands))
    attr_order = OPCODES[op.opcode][1]
    shown = [(k, op.attrs[k]) for k in attr_order if k in op.attrs]
    if shown:
        body = ", ".join(f"{k} = {_format_attr(v)}" for k, v in shown)
        parts.append(" {" + body + "}")
    parts.append(f" : {op.result_type}")
    return "".join(parts)


def _format_func(f: FunctionBody) -> list[str]:
    params = ", ".join(f"{name}: {ty}" for name, ty in f.params)
    head = f"func @{f.name}({params})"
    if len(f.return_types) == 1:
        head += f" -> {f.return_types[0]}"
    elif f.return_types:
        head += " -> (" + ", ".join(str(t) for t in f.return_types) + ")"
    lines = [head + " {"]
    lines.extend(_format_op(op) for op in f.ops)
    if f.returns:
        vals = ", ".join(f.returns)
        tys = ", ".join(str(t) for t in f.return_types)
        lines.append(f"  return {vals} : {tys}")
    else:
        lines.append("  return")
    lines.append("}")
    return lines


def _format_global(g: Global) -> str:
    return f"global @{g.name} = {_format_dense(g.value, g.type.kind)} : {g.type}"


def print_module(m: Module) -> str:
    chunks: list[str] = []
    for g in m.constants.values():
        chunks.append(_format_global(g))
    for f in m.functions.values():
        if chunks:
            chunks.append("")
        chunks.extend(_format_func(f))
    return "\n".join(chunks) + "\n"
