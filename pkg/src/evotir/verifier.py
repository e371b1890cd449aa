"""Static checks for modules: SSA form, dominance, and per-op typing.

verify_module returns a report listing every violation with the op_id it
was found at; an empty report means the module is well formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .ir import IRError, Module, OPCODES, TensorType, infer_result_type


@dataclass
class Violation:
    location: str  # op_id, or "func:@name" / "global:@name" for container rules
    rule: str
    message: str

    def __str__(self) -> str:
        return f"[{self.location}] {self.rule}: {self.message}"


@dataclass
class VerificationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, location: str, rule: str, message: str):
        self.violations.append(Violation(location, rule, message))

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


def verify_module(m: Module) -> VerificationReport:
    report = VerificationReport()
    seen_op_ids: set[str] = set()

    for g in m.constants.values():
        loc = f"global:@{g.name}"
        if tuple(g.value.shape) != g.type.shape:
            report.add(loc, "global-shape",
                       f"value shape {tuple(g.value.shape)} does not match "
                       f"{g.type}")

    for f in m.functions.values():
        floc = f"func:@{f.name}"
        defs: dict[str, tuple[int, TensorType]] = {}
        for name, ty in f.params:
            if name in defs:
                report.add(floc, "single-assignment",
                           f"duplicate parameter {name}")
            defs[name] = (-1, ty)

        for idx, op in enumerate(f.ops):
            if op.op_id in seen_op_ids:
                report.add(op.op_id, "op-id-unique",
                           f"op_id reused within the module")
            seen_op_ids.add(op.op_id)

            if op.opcode not in OPCODES:
                report.add(op.op_id, "opcode", f"unknown opcode {op.opcode}")
                continue

            arity = OPCODES[op.opcode][0]
            if len(op.operands) != arity:
                report.add(op.op_id, "arity",
                           f"{op.opcode} expects {arity} operands, "
                           f"got {len(op.operands)}")

            operand_types = []
            resolved = True
            for v in op.operands:
                if v not in defs:
                    report.add(op.op_id, "dominance",
                               f"use of undefined value {v}")
                    resolved = False
                else:
                    def_idx, ty = defs[v]
                    if def_idx >= idx:
                        report.add(op.op_id, "dominance",
                                   f"{v} is used before its definition")
                        resolved = False
                    operand_types.append(ty)

            if resolved and len(op.operands) == arity:
                try:
                    inferred = infer_result_type(
                        op.opcode, tuple(operand_types), op.attrs,
                        op.result_type)
                    if inferred != op.result_type:
                        report.add(op.op_id, "result-type",
                                   f"declared {op.result_type} but "
                                   f"{op.opcode} produces {inferred}")
                except IRError as e:
                    report.add(op.op_id, "typing", str(e))

            if op.result in defs:
                report.add(op.op_id, "single-assignment",
                           f"{op.result} is assigned more than once")
            else:
                defs[op.result] = (idx, op.result_type)

        if len(f.returns) != len(f.return_types):
            report.add(floc, "return-arity",
                       f"{len(f.returns)} returned values for "
                       f"{len(f.return_types)} declared result types")
        for v, ty in zip(f.returns, f.return_types):
            if v not in defs:
                report.add(floc, "dominance",
                           f"return of undefined value {v}")
            elif defs[v][1] != ty:
                report.add(floc, "return-type",
                           f"returned {v} has type {defs[v][1]}, "
                           f"declared {ty}")

    return report
