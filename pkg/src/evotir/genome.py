"""Patch-based genome over tensor IR modules.

An individual is a Patch: an ordered list of Edits applied to the pristine
original module. Two edit kinds exist:

* Copy: duplicate an existing op to a new position. Operands are kept when
  still in scope, otherwise rebound to in-scope values (with resize repair),
  and the copy's result may be wired into one later consumer operand.
* Delete: remove an op and rebind every orphaned use to an in-scope value
  of the same element kind, again with resize repair when shapes differ.

Repairs are chosen when the edit is created and recorded inside it, so
reapplication is deterministic. Edits that reference ops or values removed
by earlier edits in the same patch are skipped as no-ops and flagged.

Resize recipes bridge type mismatches with at most three abstract steps
(reshape for rank alignment, centered slice, centered pad with value 1).
A pad step materializes one extra scalar constant op for its pad value.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ir import (FunctionBody, Module, Operation, TensorType,
                 ValueId)
from .verifier import VerificationReport, verify_module


class GenomeError(Exception):
    pass


class RepairError(GenomeError):
    """No in-scope value of a compatible element kind exists."""


class MutationError(GenomeError):
    """Retry budget exhausted without producing a valid edit."""


class CrossoverError(GenomeError):
    """Retry budget exhausted without two valid children."""


class PatchApplicationError(GenomeError):
    def __init__(self, msg: str, report: VerificationReport | None = None):
        super().__init__(msg)
        self.report = report


# ---------------------------------------------------------------------------
# Resize recipes
# ---------------------------------------------------------------------------

# A recipe is a tuple of steps:
#   ("reshape", shape)
#   ("slice", start, limit)
#   ("pad", low, high)          pad value is always 1

ResizeRecipe = tuple


def synthesize_resize(src: TensorType, dst: TensorType) -> ResizeRecipe:
    """Deterministic op sequence converting src into dst.

    Rank expansion appends trailing size-1 dims (so the source aligns with
    the leading target dims); rank reduction slices the leading surplus
    dims to centered single elements and collapses them (so the trailing
    dims stay aligned). Remaining dims shrink by centered slice, dropping
    the extra element from the high side when off-center, and grow by
    centered pad with value 1, placing the extra element on the high side.
    """
    if src.kind != dst.kind:
        raise GenomeError(f"cannot resize across element kinds "
                          f"{src.kind} -> {dst.kind}")
    if src.shape == dst.shape:
        return ()

    steps: list[tuple] = []
    cur = src.shape

    def centered_slice(shape, targets):
        start = tuple((d - t) // 2 for d, t in zip(shape, targets))
        limit = tuple(s + t for s, t in zip(start, targets))
        return start, limit

    if len(cur) < len(dst.shape):
        cur = cur + (1,) * (len(dst.shape) - len(cur))
        steps.append(("reshape", cur))
    elif len(cur) > len(dst.shape):
        surplus = len(cur) - len(dst.shape)
        targets = tuple(
            1 if d < surplus else min(cur[d], dst.shape[d - surplus])
            for d in range(len(cur)))
        if targets != cur:
            start, limit = centered_slice(cur, targets)
            steps.append(("slice", start, limit))
            cur = targets
        cur = cur[surplus:]
        steps.append(("reshape", cur))

    shrink = tuple(min(c, d) for c, d in zip(cur, dst.shape))
    if shrink != cur:
        start, limit = centered_slice(cur, shrink)
        steps.append(("slice", start, limit))
        cur = shrink
    if cur != dst.shape:
        low = tuple((d - c) // 2 for c, d in zip(cur, dst.shape))
        high = tuple(d - c - l for c, d, l in zip(cur, dst.shape, low))
        steps.append(("pad", low, high))

    return tuple(steps)


def materialize_recipe(recipe: ResizeRecipe, source: ValueId,
                       source_type: TensorType, namer) -> tuple[list[Operation], ValueId, TensorType]:
    """Turn an abstract recipe into concrete ops. namer() yields fresh
    (op_id, value) pairs. Returns (ops, final value, final type)."""
    ops: list[Operation] = []
    value, ty = source, source_type
    kind = source_type.kind
    for step in recipe:
        if step[0] == "reshape":
            shape = tuple(step[1])
            out_ty = TensorType(shape, kind)
            op_id, res = namer()
            ops.append(Operation(op_id, "reshape", res, out_ty, (value,)))
        elif step[0] == "slice":
            start, limit = tuple(step[1]), tuple(step[2])
            out_ty = TensorType(tuple(l - s for s, l in zip(start, limit)),
                                kind)
            op_id, res = namer()
            ops.append(Operation(op_id, "slice", res, out_ty, (value,),
                                 {"start": start, "limit": limit}))
        elif step[0] == "pad":
            low, high = tuple(step[1]), tuple(step[2])
            pad_ty = TensorType((), kind)
            op_id, pad_res = namer()
            one = np.asarray(1, dtype=kind.dtype).reshape(())
            ops.append(Operation(op_id, "constant", pad_res, pad_ty,
                                 attrs={"value": one}))
            out_ty = TensorType(tuple(d + l + h for d, l, h
                                      in zip(ty.shape, low, high)), kind)
            op_id, res = namer()
            ops.append(Operation(op_id, "pad", res, out_ty, (value, pad_res),
                                 {"low": low, "high": high}))
        else:
            raise GenomeError(f"unknown recipe step {step[0]!r}")
        value, ty = ops[-1].result, ops[-1].result_type
    return ops, value, ty


# ---------------------------------------------------------------------------
# Edits and patches
# ---------------------------------------------------------------------------

RETURN_SITE = "return"


@dataclass(frozen=True)
class Binding:
    """A chosen replacement value plus the recipe bridging its type."""

    value: ValueId
    recipe: ResizeRecipe = ()


@dataclass(frozen=True)
class Rewire:
    """Wire the copied op's result into consumer's operand slot."""

    consumer: str  # op_id, or RETURN_SITE
    operand: int
    recipe: ResizeRecipe = ()


@dataclass(frozen=True)
class Rebind:
    """Replacement for one orphaned use left by a Delete."""

    consumer: str  # op_id, or RETURN_SITE
    operand: int
    value: ValueId
    recipe: ResizeRecipe = ()


@dataclass(frozen=True)
class CopyEdit:
    uid: str
    function: str
    source: str
    index: int
    operands: tuple[Binding, ...]
    rewire: Rewire | None = None


@dataclass(frozen=True)
class DeleteEdit:
    uid: str
    function: str
    target: str
    rebinds: tuple[Rebind, ...]


Edit = CopyEdit | DeleteEdit
Patch = tuple  # tuple[Edit, ...]


@dataclass
class PatchResult:
    module: Module
    skipped: list[tuple[int, str, str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


# -- serialization ----------------------------------------------------------

def _recipe_to_obj(recipe: ResizeRecipe) -> list:
    out = []
    for step in recipe:
        if step[0] == "reshape":
            out.append({"op": "reshape", "shape": list(step[1])})
        elif step[0] == "slice":
            out.append({"op": "slice", "start": list(step[1]),
                        "limit": list(step[2])})
        else:
            out.append({"op": "pad", "low": list(step[1]),
                        "high": list(step[2])})
    return out


def _recipe_from_obj(obj) -> ResizeRecipe:
    steps = []
    for d in obj:
        if d["op"] == "reshape":
            steps.append(("reshape", tuple(d["shape"])))
        elif d["op"] == "slice":
            steps.append(("slice", tuple(d["start"]), tuple(d["limit"])))
        elif d["op"] == "pad":
            steps.append(("pad", tuple(d["low"]), tuple(d["high"])))
        else:
            raise GenomeError(f"unknown recipe step {d!r}")
    return tuple(steps)


def edit_to_obj(edit: Edit) -> dict:
    if isinstance(edit, CopyEdit):
        obj = {
            "kind": "copy", "uid": edit.uid, "function": edit.function,
            "source": edit.source, "index": edit.index,
            "operands": [{"value": b.value,
                          "recipe": _recipe_to_obj(b.recipe)}
                         for b in edit.operands],
        }
        if edit.rewire is not None:
            obj["rewire"] = {"consumer": edit.rewire.consumer,
                             "operand": edit.rewire.operand,
                             "recipe": _recipe_to_obj(edit.rewire.recipe)}
        return obj
    return {
        "kind": "delete", "uid": edit.uid, "function": edit.function,
        "target": edit.target,
        "rebinds": [{"consumer": r.consumer, "operand": r.operand,
                     "value": r.value, "recipe": _recipe_to_obj(r.recipe)}
                    for r in edit.rebinds],
    }


def edit_from_obj(obj: dict) -> Edit:
    if obj["kind"] == "copy":
        rewire = None
        if "rewire" in obj:
            rw = obj["rewire"]
            rewire = Rewire(rw["consumer"], rw["operand"],
                            _recipe_from_obj(rw["recipe"]))
        return CopyEdit(
            uid=obj["uid"], function=obj["function"], source=obj["source"],
            index=obj["index"],
            operands=tuple(Binding(b["value"], _recipe_from_obj(b["recipe"]))
                           for b in obj["operands"]),
            rewire=rewire)
    if obj["kind"] == "delete":
        return DeleteEdit(
            uid=obj["uid"], function=obj["function"], target=obj["target"],
            rebinds=tuple(Rebind(r["consumer"], r["operand"], r["value"],
                                 _recipe_from_obj(r["recipe"]))
                          for r in obj["rebinds"]))
    raise GenomeError(f"unknown edit kind {obj.get('kind')!r}")


def patch_to_obj(patch: Patch) -> list:
    return [edit_to_obj(e) for e in patch]


def patch_from_obj(obj) -> Patch:
    return tuple(edit_from_obj(e) for e in obj)


def patch_dumps(patch: Patch) -> str:
    """Canonical JSON form; equal patches serialize to identical bytes."""
    return json.dumps(patch_to_obj(patch), sort_keys=True,
                      separators=(",", ":"))


def patch_loads(text: str) -> Patch:
    return patch_from_obj(json.loads(text))


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------

class _WorkFn:
    """Mutable working copy of a function during patch application."""

    def __init__(self, fn: FunctionBody):
        self.name = fn.name
        self.params = fn.params
        self.ops = [op.clone() for op in fn.ops]
        self.returns = list(fn.returns)
        self.return_types = fn.return_types

    def index_of(self, op_id: str) -> int:
        for i, op in enumerate(self.ops):
            if op.op_id == op_id:
                return i
        return -1

    def known_values(self) -> set:
        names = {n for n, _ in self.params}
        names.update(op.result for op in self.ops)
        return names

    def type_of(self, value: ValueId) -> TensorType | None:
        for n, t in self.params:
            if n == value:
                return t
        for op in self.ops:
            if op.result == value:
                return op.result_type
        return None

    def uses_of(self, value: ValueId) -> list[tuple[str, int]]:
        sites = []
        for op in self.ops:
            for k, v in enumerate(op.operands):
                if v == value:
                    sites.append((op.op_id, k))
        for k, v in enumerate(self.returns):
            if v == value:
                sites.append((RETURN_SITE, k))
        return sites

    def freeze(self) -> FunctionBody:
        return FunctionBody(name=self.name, params=self.params, ops=self.ops,
                            returns=tuple(self.returns),
                            return_types=self.return_types)


def _edit_namer(uid: str):
    counter = [0]

    def namer():
        n = counter[0]
        counter[0] += 1
        return f"{uid}_{n}", f"%{uid}_{n}"

    return namer


def _apply_copy(work: _WorkFn, edit: CopyEdit, notes: list[str]) -> str | None:
    """Apply one CopyEdit in place; return a skip reason or None."""
    src_idx = work.index_of(edit.source)
    if src_idx < 0:
        return f"source op {edit.source} not present"
    source = work.ops[src_idx]
    if len(edit.operands) != len(source.operands):
        return "operand binding count does not match the source op"
    known = work.known_values()
    for b in edit.operands:
        if b.value not in known:
            return f"binding value {b.value} not present"

    namer = _edit_namer(edit.uid)
    index = min(edit.index, len(work.ops))
    new_ops: list[Operation] = []
    final_operands = []
    for b in edit.operands:
        ty = work.type_of(b.value)
        ops, value, ty = materialize_recipe(b.recipe, b.value, ty, namer)
        new_ops.extend(ops)
        final_operands.append(value)
    copy_id, copy_res = namer()
    copy_op = source.clone(op_id=copy_id, result=copy_res,
                           operands=tuple(final_operands))
    new_ops.append(copy_op)
    work.ops[index:index] = new_ops

    if edit.rewire is not None:
        rw = edit.rewire
        if rw.consumer == RETURN_SITE:
            if rw.operand >= len(work.returns):
                notes.append(f"{edit.uid}: rewire dropped, return slot gone")
                return None
            ops, value, _ = materialize_recipe(
                rw.recipe, copy_res, copy_op.result_type, namer)
            work.ops.extend(ops)
            work.returns[rw.operand] = value
            return None
        cons_idx = work.index_of(rw.consumer)
        if cons_idx < 0:
            notes.append(f"{edit.uid}: rewire dropped, consumer removed")
            return None
        if cons_idx <= work.index_of(copy_id):
            notes.append(f"{edit.uid}: rewire dropped, consumer precedes copy")
            return None
        consumer = work.ops[cons_idx]
        if rw.operand >= len(consumer.operands):
            notes.append(f"{edit.uid}: rewire dropped, operand slot gone")
            return None
        ops, value, _ = materialize_recipe(
            rw.recipe, copy_res, copy_op.result_type, namer)
        work.ops[cons_idx:cons_idx] = ops
        consumer = work.ops[work.index_of(rw.consumer)]
        consumer.operands = tuple(
            value if k == rw.operand else v
            for k, v in enumerate(consumer.operands))
    return None


def _apply_delete(work: _WorkFn, edit: DeleteEdit,
                  notes: list[str]) -> str | None:
    tgt_idx = work.index_of(edit.target)
    if tgt_idx < 0:
        return f"target op {edit.target} not present"
    target = work.ops[tgt_idx]
    dead = target.result

    uses = work.uses_of(dead)
    recorded = {(r.consumer, r.operand): r for r in edit.rebinds}
    for site in uses:
        if site not in recorded:
            return f"use {site} of {dead} has no recorded rebind"
    known = work.known_values()
    for site in uses:
        r = recorded[site]
        if r.value == dead or r.value not in known:
            return f"rebind value {r.value} not usable"
    stale = [r for key, r in recorded.items() if key not in set(uses)]
    for r in stale:
        notes.append(f"{edit.uid}: stale rebind for {(r.consumer, r.operand)}")

    namer = _edit_namer(edit.uid)
    del work.ops[tgt_idx]

    op_sites = [s for s in uses if s[0] != RETURN_SITE]
    op_sites.sort(key=lambda s: (-work.index_of(s[0]), -s[1]))
    for op_id, operand_idx in op_sites:
        r = recorded[(op_id, operand_idx)]
        ops, value, _ = materialize_recipe(
            r.recipe, r.value, work.type_of(r.value), namer)
        cons_idx = work.index_of(op_id)
        work.ops[cons_idx:cons_idx] = ops
        consumer = work.ops[work.index_of(op_id)]
        consumer.operands = tuple(
            value if k == operand_idx else v
            for k, v in enumerate(consumer.operands))
    for site in uses:
        if site[0] != RETURN_SITE:
            continue
        r = recorded[site]
        ops, value, _ = materialize_recipe(
            r.recipe, r.value, work.type_of(r.value), namer)
        work.ops.extend(ops)
        work.returns[site[1]] = value
    return None


def apply_patch(original: Module, patch: Patch,
                verify: bool = True) -> PatchResult:
    """Apply edits in order to a copy of the original.

    Edits whose referenced ops or values are gone are skipped and flagged.
    The result is verified; a verification failure raises
    PatchApplicationError (the patch does not repair its damage).
    """
    works = {name: _WorkFn(fn) for name, fn in original.functions.items()}
    result = PatchResult(module=None)  # type: ignore[arg-type]
    for i, edit in enumerate(patch):
        work = works.get(edit.function)
        if work is None:
            result.skipped.append((i, edit.uid,
                                   f"no function @{edit.function}"))
            continue
        if isinstance(edit, CopyEdit):
            reason = _apply_copy(work, edit, result.notes)
        elif isinstance(edit, DeleteEdit):
            reason = _apply_delete(work, edit, result.notes)
        else:
            reason = f"unknown edit type {type(edit).__name__}"
        if reason is not None:
            result.skipped.append((i, edit.uid, reason))

    module = Module(
        functions={name: w.freeze() for name, w in works.items()},
        constants=original.constants)
    result.module = module
    if verify:
        report = verify_module(module)
        if not report.ok:
            raise PatchApplicationError(
                f"patched module fails verification:\n{report}", report)
    return result


# ---------------------------------------------------------------------------
# Repair
# ---------------------------------------------------------------------------

def _scope_at(fn_params, ops, index, exclude: str | None = None):
    """Values defined before op index, as (name, type) in definition order."""
    scope = [(n, t) for n, t in fn_params]
    for op in ops[:index]:
        if op.result != exclude:
            scope.append((op.result, op.result_type))
    return scope


def _pick_replacement(scope, want: TensorType, rng):
    """Exact-type candidates first; otherwise any same-element-kind value
    plus a resize recipe. Returns a Binding-shaped (value, recipe) pair."""
    exact = [(n, t) for n, t in scope if t == want]
    if exact:
        name, _ = exact[rng.randrange(len(exact))]
        return name, ()
    kind = [(n, t) for n, t in scope if t.kind == want.kind]
    if not kind:
        raise RepairError(f"no in-scope value of kind {want.kind}")
    name, ty = kind[rng.randrange(len(kind))]
    return name, synthesize_resize(ty, want)


def repair_uses(m: Module, function: str, broken: ValueId,
                rng) -> tuple[Rebind, ...]:
    """Choose replacement bindings for every use of `broken`, assuming its
    definition is about to be removed. Raises RepairError when a use has
    no same-element-kind candidate in scope."""
    fn = m.functions[function]
    work = _WorkFn(fn)
    broken_ty = work.type_of(broken)
    if broken_ty is None:
        raise GenomeError(f"{broken} is not defined in @{function}")
    rebinds = []
    for consumer, operand_idx in work.uses_of(broken):
        if consumer == RETURN_SITE:
            scope = _scope_at(fn.params, fn.ops, len(fn.ops), exclude=broken)
            want = fn.return_types[operand_idx]
        else:
            idx = work.index_of(consumer)
            scope = _scope_at(fn.params, fn.ops, idx, exclude=broken)
            want = fn.ops[idx].operands[operand_idx]
            want = work.type_of(want)
        value, recipe = _pick_replacement(scope, want, rng)
        rebinds.append(Rebind(consumer, operand_idx, value, recipe))
    return tuple(rebinds)


# ---------------------------------------------------------------------------
# Mutation
# ---------------------------------------------------------------------------

def _fresh_uid(rng) -> str:
    return f"{rng.getrandbits(40):010x}"


def _make_delete(m: Module, fname: str, op_idx: int, rng) -> DeleteEdit:
    uid = _fresh_uid(rng)
    fn = m.functions[fname]
    target = fn.ops[op_idx]
    rebinds = repair_uses(m, fname, target.result, rng)
    return DeleteEdit(uid=uid, function=fname, target=target.op_id,
                      rebinds=rebinds)


def _make_copy(m: Module, fname: str, op_idx: int, rng) -> CopyEdit:
    uid = _fresh_uid(rng)
    fn = m.functions[fname]
    source = fn.ops[op_idx]
    index = rng.randrange(len(fn.ops) + 1)
    scope = _scope_at(fn.params, fn.ops, index)
    in_scope = {n for n, _ in scope}
    types = {n: t for n, t in _scope_at(fn.params, fn.ops, len(fn.ops))}

    bindings = []
    for v in source.operands:
        if v in in_scope:
            bindings.append(Binding(v, ()))
        else:
            value, recipe = _pick_replacement(scope, types[v], rng)
            bindings.append(Binding(value, recipe))

    # candidate consumer slots strictly after the insertion point
    out_kind = source.result_type.kind
    slots: list[tuple[str, int, TensorType]] = []
    for op in fn.ops[index:]:
        for k, operand in enumerate(op.operands):
            ty = types.get(operand)
            if ty is not None and ty.kind == out_kind:
                slots.append((op.op_id, k, ty))
    for k, ty in enumerate(fn.return_types):
        if ty.kind == out_kind:
            slots.append((RETURN_SITE, k, ty))
    rewire = None
    if slots:
        consumer, operand_idx, want = slots[rng.randrange(len(slots))]
        rewire = Rewire(consumer, operand_idx,
                        synthesize_resize(source.result_type, want))

    return CopyEdit(uid=uid, function=fname, source=source.op_id,
                    index=index, operands=tuple(bindings), rewire=rewire)


def mutate(m: Module, rng, *, functions: list[str] | None = None,
           smoke=None, retries: int = 100) -> Edit:
    """Produce one valid Edit against module m.

    Validity means: applying just this edit to m verifies cleanly and, when
    a smoke callable is given, smoke(variant) is true. Retries up to
    `retries` times before raising MutationError.
    """
    names = functions if functions is not None else list(m.functions)
    sites = [(f, i) for f in names for i in range(len(m.functions[f].ops))]
    if not sites:
        raise MutationError("module has no ops to mutate")

    for _ in range(retries):
        fname, op_idx = sites[rng.randrange(len(sites))]
        try:
            if rng.random() < 0.5:
                edit = _make_delete(m, fname, op_idx, rng)
            else:
                edit = _make_copy(m, fname, op_idx, rng)
        except RepairError:
            continue
        try:
            result = apply_patch(m, (edit,))
        except PatchApplicationError:
            continue
        if result.skipped:
            continue
        if smoke is not None and not smoke(result.module):
            continue
        return edit
    raise MutationError(f"no valid edit after {retries} attempts")


# ---------------------------------------------------------------------------
# Crossover
# ---------------------------------------------------------------------------

def default_child_validity(original: Module, smoke=None):
    def valid(patch: Patch) -> bool:
        try:
            result = apply_patch(original, patch)
        except PatchApplicationError:
            return False
        if smoke is not None and not smoke(result.module):
            return False
        return True

    return valid


def crossover_once(a: Patch, b: Patch, rng) -> tuple[Patch, Patch]:
    """One unchecked recombination: concatenate both parents' edits,
    shuffle uniformly, cut once at a uniform index; the two sides are
    the children. Their combined edit multiset equals the parents'."""
    order = list(a) + list(b)
    rng.shuffle(order)
    cut = rng.randrange(len(order) + 1)
    return tuple(order[:cut]), tuple(order[cut:])


def crossover(a: Patch, b: Patch, original: Module, rng, *,
              validity=None, retries: int = 25) -> tuple[Patch, Patch]:
    """Crossover with a validity gate: recombine until both children are
    valid or the budget runs out (CrossoverError; callers fall back to
    cloning the parents)."""
    if validity is None:
        validity = default_child_validity(original)
    for _ in range(max(1, retries)):
        c1, c2 = crossover_once(a, b, rng)
        if validity(c1) and validity(c2):
            return c1, c2
    raise CrossoverError(f"no valid child pair after {retries} attempts")
