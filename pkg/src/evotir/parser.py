"""Textual format parser for the tensor dialect (.tir files).

The grammar lives in docs/dialect.md. Parsing assigns op_ids in textual
order ("o0", "o1", ...) across the whole module.
"""
from __future__ import annotations

import re

import numpy as np

from .ir import (ElementKind, FunctionBody, Global, IRError, Module, OPCODES,
                 Operation, TensorType)


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        if line:
            msg = f"line {line}:{col}: {msg}"
        super().__init__(msg)
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+|//[^\n]*)
    | (?P<type>tensor<[0-9x]*(?:f32|i32|i1)>)
    | (?P<dense>dense<[^<>]*>)
    | (?P<value>%[A-Za-z0-9_]+)
    | (?P<symbol>@[A-Za-z0-9_]+)
    | (?P<number>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<arrow>->)
    | (?P<punct>[{}()\[\],=:])
    """,
    re.VERBOSE,
)

_TYPE_RE = re.compile(r"tensor<((?:\d+x)*)(f32|i32|i1)>")
_DENSE_ITEM_RE = re.compile(
    r"\s*(?:(?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<word>true|false|inf|nan|-inf)"
    r"|(?P<punct>[\[\],]))")

_INT_ATTRS = ("axis", "dim")
_INT_LIST_ATTRS = ("perm", "dims", "low", "high", "start", "limit")
_KIND_ATTRS = ("kind",)


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}",
                             line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, tok, line, m.start() - line_start + 1))
        line += tok.count("\n")
        if "\n" in tok:
            line_start = m.start() + tok.rindex("\n") + 1
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


def parse_type(text: str) -> TensorType:
    m = _TYPE_RE.fullmatch(text)
    if m is None:
        raise ParseError(f"malformed tensor type {text!r}")
    dims = tuple(int(d) for d in m.group(1).split("x") if d)
    try:
        return TensorType(dims, ElementKind(m.group(2)))
    except IRError as e:
        raise ParseError(str(e)) from e


def _parse_dense_payload(payload: str, where: _Token):
    """Parse the inside of dense<...> into a scalar or nested lists."""
    pos = 0

    def error(msg):
        raise ParseError(msg, where.line, where.col)

    def next_item():
        nonlocal pos
        m = _DENSE_ITEM_RE.match(payload, pos)
        if m is None:
            error(f"malformed dense literal near {payload[pos:pos + 12]!r}")
        pos = m.end()
        return m

    def parse_value(m):
        nonlocal pos
        if m.group("num"):
            t = m.group("num")
            return float(t) if ("." in t or "e" in t or "E" in t) else int(t)
        if m.group("word"):
            return {"true": True, "false": False, "inf": float("inf"),
                    "-inf": float("-inf"), "nan": float("nan")}[m.group("word")]
        if m.group("punct") == "[":
            items = []
            m2 = next_item()
            if m2.group("punct") == "]":
                return items
            while True:
                items.append(parse_value(m2))
                m2 = next_item()
                if m2.group("punct") == "]":
                    return items
                if m2.group("punct") != ",":
                    error("expected ',' or ']' in dense literal")
                m2 = next_item()
        error("malformed dense literal")

    value = parse_value(next_item())
    if payload[pos:].strip():
        error("trailing characters in dense literal")
    return value


def _dense_to_array(payload_value, ty: TensorType, where: _Token) -> np.ndarray:
    arr = np.array(payload_value, dtype=ty.kind.dtype)
    if tuple(arr.shape) != ty.shape:
        raise ParseError(
            f"dense literal shape {tuple(arr.shape)} does not match {ty}",
            where.line, where.col)
    return arr


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0
        self.next_op_id = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self, kind: str | None = None, text: str | None = None) -> _Token:
        tok = self.tokens[self.i]
        if kind is not None and tok.kind != kind:
            raise ParseError(f"expected {kind}, got {tok.text!r}",
                             tok.line, tok.col)
        if text is not None and tok.text != text:
            raise ParseError(f"expected {text!r}, got {tok.text!r}",
                             tok.line, tok.col)
        self.i += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.tokens[self.i]
        return tok.kind == kind and (text is None or tok.text == text)

    def fresh_op_id(self) -> str:
        op_id = f"o{self.next_op_id}"
        self.next_op_id += 1
        return op_id

    # -- grammar ----------------------------------------------------------

    def parse_module(self) -> Module:
        functions: dict[str, FunctionBody] = {}
        constants: dict[str, Global] = {}
        while not self.at("eof"):
            if self.at("ident", "global"):
                g = self.parse_global()
                if g.name in constants:
                    raise ParseError(f"duplicate global @{g.name}")
                constants[g.name] = g
            elif self.at("ident", "func"):
                f = self.parse_func()
                if f.name in functions:
                    raise ParseError(f"duplicate function @{f.name}")
                functions[f.name] = f
            else:
                tok = self.peek()
                raise ParseError(f"expected 'func' or 'global', got "
                                 f"{tok.text!r}", tok.line, tok.col)
        if not functions:
            raise ParseError("module has no functions")
        return Module(functions=functions, constants=constants)

    def parse_global(self) -> Global:
        self.take("ident", "global")
        name = self.take("symbol").text[1:]
        self.take("punct", "=")
        dense = self.take("dense")
        self.take("punct", ":")
        ty = parse_type(self.take("type").text)
        payload = _parse_dense_payload(dense.text[6:-1], dense)
        return Global(name=name, type=ty,
                      value=_dense_to_array(payload, ty, dense))

    def parse_func(self) -> FunctionBody:
        self.take("ident", "func")
        name = self.take("symbol").text[1:]
        self.take("punct", "(")
        params = []
        seen = set()
        while not self.at("punct", ")"):
            if params:
                self.take("punct", ",")
            pname = self.take("value").text
            self.take("punct", ":")
            pty = parse_type(self.take("type").text)
            if pname in seen:
                raise ParseError(f"duplicate parameter {pname}")
            seen.add(pname)
            params.append((pname, pty))
        self.take("punct", ")")
        return_types = []
        if self.at("arrow"):
            self.take("arrow")
            if self.at("punct", "("):
                self.take("punct", "(")
                while not self.at("punct", ")"):
                    if return_types:
                        self.take("punct", ",")
                    return_types.append(parse_type(self.take("type").text))
                self.take("punct", ")")
            else:
                return_types.append(parse_type(self.take("type").text))
        self.take("punct", "{")
        ops = []
        while not self.at("ident", "return"):
            ops.append(self.parse_op())
        returns = self.parse_return(len(return_types))
        self.take("punct", "}")
        return FunctionBody(name=name, params=tuple(params), ops=ops,
                            returns=returns,
                            return_types=tuple(return_types))

    def parse_op(self) -> Operation:
        result = self.take("value").text
        self.take("punct", "=")
        opcode_tok = self.take("ident")
        opcode = opcode_tok.text
        if opcode not in OPCODES:
            raise ParseError(f"unknown opcode '{opcode}'",
                             opcode_tok.line, opcode_tok.col)
        attrs: dict = {}
        operands: list[str] = []
        dense_tok = None
        if opcode == "constant":
            dense_tok = self.take("dense")
        else:
            while self.at("value"):
                operands.append(self.take("value").text)
                if self.at("punct", ","):
                    self.take("punct", ",")
                else:
                    break
            if self.at("punct", "{"):
                attrs = self.parse_attrs()
        self.take("punct", ":")
        ty = parse_type(self.take("type").text)
        if dense_tok is not None:
            payload = _parse_dense_payload(dense_tok.text[6:-1], dense_tok)
            attrs["value"] = _dense_to_array(payload, ty, dense_tok)
        return Operation(op_id=self.fresh_op_id(), opcode=opcode,
                         result=result, result_type=ty,
                         operands=tuple(operands), attrs=attrs)

    def parse_attrs(self) -> dict:
        self.take("punct", "{")
        attrs: dict = {}
        while not self.at("punct", "}"):
            if attrs:
                self.take("punct", ",")
            name_tok = self.take("ident")
            name = name_tok.text
            self.take("punct", "=")
            if name in _INT_ATTRS:
                attrs[name] = int(self.take("number").text)
            elif name in _INT_LIST_ATTRS:
                attrs[name] = self.parse_int_list()
            elif name in _KIND_ATTRS:
                attrs[name] = self.take("ident").text
            else:
                raise ParseError(f"unknown attribute '{name}'",
                                 name_tok.line, name_tok.col)
        self.take("punct", "}")
        return attrs

    def parse_int_list(self) -> tuple[int, ...]:
        self.take("punct", "[")
        items = []
        while not self.at("punct", "]"):
            if items:
                self.take("punct", ",")
            items.append(int(self.take("number").text))
        self.take("punct", "]")
        return tuple(items)

    def parse_return(self, n_types: int) -> tuple[str, ...]:
        self.take("ident", "return")
        values = []
        while self.at("value"):
            values.append(self.take("value").text)
            if self.at("punct", ","):
                self.take("punct", ",")
            else:
                break
        if values:
            colon = self.take("punct", ":")
            types = [parse_type(self.take("type").text)]
            while self.at("punct", ","):
                self.take("punct", ",")
                types.append(parse_type(self.take("type").text))
            if len(types) != len(values):
                raise ParseError("return value/type count mismatch",
                                 colon.line, colon.col)
        if len(values) != n_types:
            raise ParseError(
                f"function declares {n_types} results but returns "
                f"{len(values)}")
        return tuple(values)


def parse_module(text: str) -> Module:
    """Parse .tir text into a Module. Raises ParseError with position info."""
    return _Parser(text).parse_module()
