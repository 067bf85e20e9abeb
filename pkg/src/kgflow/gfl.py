"""Graphic Flowline Language: parse, canonical formatting, DOT export.

GFL is the textual twin of the visual flowline designer. ``:=`` binds a name
to a literal list, ``:<name>`` opens the unique entry, ``|`` pipes data from
the enclosing (less indented) call into the nested one, and the single call
suffixed ``:`` is the outlet. A call is ``namespace.function`` with an
optional ``[label]`` instance tag, an optional ``(...)`` predicate, and an
optional ``-> a, b`` output binding list. Two calls with the same
(namespace, function, label) denote the same DAG vertex; a repeated call
adds an in-edge, except directly under the entry where a repetition merely
re-opens the vertex to continue its pipeline.

Indentation is significant: spaces only, one level per nesting step, using
any consistent multiple of four spaces.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from . import registry
from .flowline import (
    Flowline,
    KIND_MODEL_CC,
    KIND_MODEL_CE,
    KIND_OPERATOR,
    TaskNode,
    validate,
)

NAMESPACE_MODEL = "model"
NAMESPACE_OPT = "opt"

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_IDENT_RX = re.compile(_IDENT)


class GflError(ValueError):
    """Parse or format failure, carrying a source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}" if line else message)
        self.message = message
        self.line = line
        self.col = col


# --- predicate mini-language -------------------------------------------------
#
# expr    := and_expr ('or' and_expr)*
# and_expr:= cmp ('and' cmp)*
# cmp     := operand (('in' | 'not in' | '==' | '!=') operand)?
# operand := IDENT | STRING | NUMBER | list | '(' expr ')'
#
# Identifiers name row columns (or their `->` aliases) and document bindings.

@dataclass(frozen=True)
class Lit:
    value: Any


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class BoolOp:
    op: str
    terms: tuple[Any, ...]


_TOKEN_RX = re.compile(
    r"\s*(?:(?P<string>'(?:[^'\\]|\\.)*'|\"(?:[^\"\\]|\\.)*\")"
    r"|(?P<number>-?\d+(?:\.\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)"
    r"|(?P<sym>==|!=|\[|\]|\(|\)|,))")


def _tokenize_predicate(text: str, line: int, col: int) -> list[tuple[str, Any]]:
    tokens: list[tuple[str, Any]] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RX.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise GflError(f"bad predicate token at {text[pos:]!r}",
                           line, col + pos)
        if m.group("string") is not None:
            raw = m.group("string")
            tokens.append(("lit", raw[1:-1].replace("\\'", "'")
                           .replace('\\"', '"').replace("\\\\", "\\")))
        elif m.group("number") is not None:
            raw = m.group("number")
            tokens.append(("lit", float(raw) if "." in raw else int(raw)))
        elif m.group("ident") is not None:
            word = m.group("ident")
            if word in ("in", "not", "and", "or"):
                tokens.append(("kw", word))
            else:
                tokens.append(("ref", word))
        else:
            tokens.append(("sym", m.group("sym")))
        pos = m.end()
    return tokens


class _PredParser:
    def __init__(self, tokens, line, col):
        self.tokens = tokens
        self.i = 0
        self.line = line
        self.col = col

    def error(self, msg):
        raise GflError(f"predicate: {msg}", self.line, self.col)

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_sym(self, sym):
        kind, val = self.take()
        if kind != "sym" or val != sym:
            self.error(f"expected {sym!r}")

    def parse(self):
        node = self.expr()
        if self.i != len(self.tokens):
            self.error("trailing tokens")
        return node

    def expr(self):
        terms = [self.and_expr()]
        while self.peek() == ("kw", "or"):
            self.take()
            terms.append(self.and_expr())
        return terms[0] if len(terms) == 1 else BoolOp("or", tuple(terms))

    def and_expr(self):
        terms = [self.cmp()]
        while self.peek() == ("kw", "and"):
            self.take()
            terms.append(self.cmp())
        return terms[0] if len(terms) == 1 else BoolOp("and", tuple(terms))

    def cmp(self):
        left = self.operand()
        kind, val = self.peek()
        if kind == "kw" and val == "in":
            self.take()
            return Cmp("in", left, self.operand())
        if kind == "kw" and val == "not":
            self.take()
            kind2, val2 = self.take()
            if (kind2, val2) != ("kw", "in"):
                self.error("expected 'in' after 'not'")
            return Cmp("not in", left, self.operand())
        if kind == "sym" and val in ("==", "!="):
            self.take()
            return Cmp(val, left, self.operand())
        return left

    def operand(self):
        kind, val = self.take()
        if kind == "lit":
            return Lit(val)
        if kind == "ref":
            return Ref(val)
        if kind == "sym" and val == "[":
            items = []
            while self.peek() != ("sym", "]"):
                tok_kind, tok_val = self.take()
                if tok_kind not in ("lit", "ref"):
                    self.error("lists may only contain literals")
                items.append(tok_val)
                if self.peek() == ("sym", ","):
                    self.take()
            self.take()  # closing ]
            return Lit(tuple(items))
        if kind == "sym" and val == "(":
            node = self.expr()
            self.expect_sym(")")
            return node
        self.error(f"unexpected token {val!r}")


def parse_predicate(text: str, line: int = 0, col: int = 0):
    """Parse a predicate expression into its tiny AST."""
    return _PredParser(_tokenize_predicate(text, line, col), line, col).parse()


def eval_predicate(node, lookup: Callable[[str], Any]) -> bool:
    """Evaluate a predicate AST; ``lookup`` resolves identifiers."""
    def ev(n):
        if isinstance(n, Lit):
            return n.value
        if isinstance(n, Ref):
            return lookup(n.name)
        if isinstance(n, Cmp):
            left, right = ev(n.left), ev(n.right)
            if n.op == "in":
                return left in right
            if n.op == "not in":
                return left not in right
            if n.op == "==":
                return left == right
            return left != right
        if isinstance(n, BoolOp):
            if n.op == "and":
                return all(ev(t) for t in n.terms)
            return any(ev(t) for t in n.terms)
        raise TypeError(f"not a predicate node: {n!r}")

    return bool(ev(node))


# --- document model ----------------------------------------------------------

@dataclass(frozen=True)
class CallNode:
    """One call occurrence in the source text."""

    namespace: str
    function: str
    instance_label: str | None
    predicate: str | None
    outputs: tuple[str, ...]
    is_outlet: bool
    line: int
    col: int
    depth: int

    @property
    def vertex_id(self) -> str:
        if self.instance_label:
            return f"{self.function}[{self.instance_label}]"
        return self.function


@dataclass
class GflDocument:
    """Parsed source: bindings, the entry name, and call occurrences."""

    definitions: dict[str, tuple] = field(default_factory=dict)
    entry: str = ""
    entry_line: int = 0
    calls: list[CallNode] = field(default_factory=list)


_CALL_RX = re.compile(
    rf"(?P<ns>{_IDENT})\.(?P<fn>{_IDENT})"
    rf"(?:\[(?P<label>[^\]]*)\])?")
_BINDING_RX = re.compile(rf"^(?P<name>{_IDENT})\s*:=\s*(?P<rest>.+)$")
_ROOT_RX = re.compile(rf"^:(?P<name>{_IDENT})\s*$")


def _parse_literal_list(text: str, line: int, col: int) -> tuple:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise GflError("binding value must be a [...] literal list", line, col)
    tokens = _tokenize_predicate(text, line, col)
    parser = _PredParser(tokens, line, col)
    node = parser.operand()
    if parser.i != len(tokens) or not isinstance(node, Lit):
        raise GflError("binding value must be a [...] literal list", line, col)
    return tuple(node.value)


def _split_call(text: str, line: int, col: int) -> CallNode:
    """Parse one `ns.fn[label](pred) -> a, b:` call expression."""
    m = _CALL_RX.match(text)
    if m is None:
        raise GflError(f"expected a namespace.function call, got {text!r}",
                       line, col)
    ns, fn, label = m.group("ns"), m.group("fn"), m.group("label")
    if ns not in (NAMESPACE_MODEL, NAMESPACE_OPT):
        raise GflError(f"unknown namespace {ns!r}", line, col)
    if label is not None and not _IDENT_RX.fullmatch(label):
        raise GflError(f"instance label {label!r} is not an identifier",
                       line, col + m.start("label"))
    rest = text[m.end():]
    offset = m.end()

    predicate = None
    if rest.startswith("("):
        depth = 0
        end = None
        for i, ch in enumerate(rest):
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
                if depth == 0:
                    end = i
                    break
        if end is None:
            raise GflError("unbalanced parentheses in predicate", line,
                           col + offset)
        predicate = rest[1:end]
        parse_predicate(predicate, line, col + offset + 1)
        rest = rest[end + 1:]
        offset += end + 1

    outputs: tuple[str, ...] = ()
    stripped = rest.lstrip()
    offset += len(rest) - len(stripped)
    rest = stripped
    if rest.startswith("->"):
        rest = rest[2:]
        is_outlet = rest.rstrip().endswith(":")
        if is_outlet:
            rest = rest.rstrip()[:-1]
        names = [n.strip() for n in rest.split(",")]
        if any(not _IDENT_RX.fullmatch(n) for n in names):
            raise GflError(f"bad output binding list {rest.strip()!r}",
                           line, col + offset)
        outputs = tuple(names)
        rest = ""
    else:
        is_outlet = False

    rest = rest.strip()
    if rest == ":":
        is_outlet = True
    elif rest:
        raise GflError(f"unexpected trailing text {rest!r}", line, col + offset)

    return CallNode(ns, fn, label, predicate, outputs, is_outlet,
                    line, col, depth=-1)


def parse_document(text: str) -> GflDocument:
    """Lex and structure GFL source without building the graph."""
    doc = GflDocument()
    indent_unit: int | None = None
    seen_root = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        stripped = raw.lstrip(" ")
        indent = len(raw) - len(stripped)
        if "\t" in raw[:indent + len(stripped) - len(stripped.lstrip("\t"))] \
                or stripped.startswith("\t"):
            raise GflError("tabs are not allowed in indentation", lineno, 1)
        if not seen_root:
            if indent != 0:
                raise GflError("indentation before the pipeline root",
                               lineno, 1)
            m = _BINDING_RX.match(stripped)
            if m:
                name = m.group("name")
                if name in doc.definitions:
                    raise GflError(f"duplicate binding {name!r}", lineno, 1)
                doc.definitions[name] = _parse_literal_list(
                    m.group("rest"), lineno, 1 + len(name))
                continue
            m = _ROOT_RX.match(stripped)
            if m:
                doc.entry = m.group("name")
                doc.entry_line = lineno
                seen_root = True
                continue
            raise GflError("expected a binding or the ':<entry>' root",
                           lineno, 1)
        # Pipeline body.
        if indent == 0:
            raise GflError("only one pipeline root is allowed", lineno, 1)
        if indent_unit is None:
            if indent % 4 != 0:
                raise GflError("indentation must be a multiple of 4 spaces",
                               lineno, 1)
            indent_unit = indent
        if indent % indent_unit != 0:
            raise GflError(
                f"inconsistent indentation (unit is {indent_unit} spaces)",
                lineno, 1)
        depth = indent // indent_unit
        if not stripped.startswith("|"):
            raise GflError("pipeline lines must start with '|'", lineno,
                           indent + 1)
        body = stripped[1:].strip()
        call = _split_call(body, lineno, indent + 1 + (len(stripped) - len(stripped[1:].lstrip())))
        doc.calls.append(CallNode(call.namespace, call.function,
                                  call.instance_label, call.predicate,
                                  call.outputs, call.is_outlet,
                                  call.line, call.col, depth))
    if not seen_root:
        raise GflError("no ':<entry>' root found", 1, 1)
    return doc


def _node_kind(namespace: str, function: str) -> tuple[str, str | None]:
    if namespace == NAMESPACE_MODEL:
        spec = registry.model_spec(function)
        if spec is not None and spec.task == registry.TASK_CE:
            return KIND_MODEL_CE, None
        return KIND_MODEL_CC, None
    op = registry.operator_spec(function)
    return KIND_OPERATOR, (op.family if op is not None else None)


def parse(text: str) -> Flowline:
    """Parse GFL source into a validated flowline.

    Raises GflError (with line/column) on lex errors, unknown namespaces,
    conflicting labels, or if the resulting graph fails flowline validation.
    """
    doc = parse_document(text)

    vertices: dict[str, dict] = {}
    vertex_order: list[str] = []
    edges: list[tuple[str, str]] = []
    edge_set: set[tuple[str, str]] = set()
    spans: dict[str, tuple[int, int]] = {}

    entry_id = doc.entry
    vertices[entry_id] = {
        "namespace": NAMESPACE_OPT,
        "function": entry_id,
        "label": None,
        "predicate": None,
        "outputs": (),
        "line": doc.entry_line,
    }
    vertex_order.append(entry_id)
    spans[entry_id] = (doc.entry_line, 1)

    stack: list[str] = [entry_id]
    outlet: str | None = None

    for call in doc.calls:
        if call.depth > len(stack):
            raise GflError("over-indented pipe (skips a nesting level)",
                           call.line, call.col)
        parent = stack[call.depth - 1]
        vid = call.vertex_id
        existing = vertices.get(vid)
        if existing is not None:
            if existing["namespace"] != call.namespace:
                raise GflError(
                    f"label conflict: {vid!r} already defined in namespace "
                    f"{existing['namespace']!r}", call.line, call.col)
            if call.predicate is not None and \
                    existing["predicate"] not in (None, call.predicate):
                raise GflError(
                    f"conflicting predicate for repeated call {vid!r}",
                    call.line, call.col)
            if call.outputs and existing["outputs"] not in ((), call.outputs):
                raise GflError(
                    f"conflicting output bindings for repeated call {vid!r}",
                    call.line, call.col)
            if call.predicate is not None and existing["predicate"] is None:
                existing["predicate"] = call.predicate
            if call.outputs and not existing["outputs"]:
                existing["outputs"] = call.outputs
            # A repetition directly under the entry re-opens the vertex to
            # continue its pipeline; it does not pipe the corpus into it.
            if parent != entry_id:
                if (parent, vid) not in edge_set:
                    edges.append((parent, vid))
                    edge_set.add((parent, vid))
        else:
            vertices[vid] = {
                "namespace": call.namespace,
                "function": call.function,
                "label": call.instance_label,
                "predicate": call.predicate,
                "outputs": call.outputs,
                "line": call.line,
            }
            vertex_order.append(vid)
            spans[vid] = (call.line, call.col)
            if (parent, vid) not in edge_set:
                edges.append((parent, vid))
                edge_set.add((parent, vid))
        if call.is_outlet:
            if outlet is not None and outlet != vid:
                raise GflError(
                    f"multiple outlets: {outlet!r} and {vid!r}",
                    call.line, call.col)
            outlet = vid
        del stack[call.depth:]
        stack.append(vid)

    if outlet is None:
        raise GflError("no outlet: exactly one call must end with ':'",
                       doc.entry_line, 1)

    nodes = []
    for vid in vertex_order:
        info = vertices[vid]
        kind, family = _node_kind(info["namespace"], info["function"])
        config: dict[str, Any] = {
            "namespace": info["namespace"],
            "function": info["function"],
        }
        if info["label"]:
            config["label"] = info["label"]
        if info["predicate"] is not None:
            config["predicate"] = info["predicate"]
            referenced = _referenced_bindings(info["predicate"],
                                              doc.definitions)
            if referenced:
                config["bindings"] = referenced
        if info["outputs"]:
            config["outputs"] = list(info["outputs"])
        nodes.append(TaskNode(id=vid, label=info["function"], kind=kind,
                              operator_family=family, config=config))

    flowline = Flowline(tuple(nodes), tuple(edges), entry_id, outlet)
    report = validate(flowline)
    if not report.ok:
        first = report.violations[0]
        line, col = _violation_span(first, spans, doc.entry_line)
        raise GflError(f"invalid flowline: {first}", line, col)
    return flowline


def _referenced_bindings(predicate: str,
                         definitions: Mapping[str, tuple]) -> dict[str, list]:
    names: set[str] = set()

    def collect(node):
        if isinstance(node, Ref) and node.name in definitions:
            names.add(node.name)
        elif isinstance(node, Cmp):
            collect(node.left)
            collect(node.right)
        elif isinstance(node, BoolOp):
            for t in node.terms:
                collect(t)

    collect(parse_predicate(predicate))
    return {n: list(definitions[n]) for n in sorted(names)}


def _violation_span(violation, spans, default_line):
    for vid, span in spans.items():
        if f"{vid!r}" in violation.detail or f" {vid}" in violation.detail:
            return span
    return (default_line, 1)


# --- canonical formatting ----------------------------------------------------

def _format_literal(value) -> str:
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace("'", "\\'")
        return f"'{escaped}'"
    if isinstance(value, float) and value.is_integer():
        return repr(value)
    return repr(value)


def _call_text(node: TaskNode, with_details: bool) -> str:
    config = node.config
    ns = config.get("namespace",
                    NAMESPACE_MODEL if node.is_model else NAMESPACE_OPT)
    function = config.get("function")
    label = config.get("label")
    if function is None:
        # Programmatically built vertices: recover "fn[label]" from the id.
        m = re.fullmatch(rf"(?P<fn>{_IDENT})\[(?P<label>{_IDENT})\]", node.id)
        if m:
            function, label = m.group("fn"), m.group("label")
        else:
            function = node.id
    elif label is None:
        m = re.fullmatch(rf"{re.escape(function)}\[(?P<label>{_IDENT})\]",
                         node.id)
        if m:
            label = m.group("label")
    text = f"{ns}.{function}"
    if label:
        text += f"[{label}]"
    if with_details:
        predicate = config.get("predicate")
        if predicate is not None:
            text += f"({predicate})"
        outputs = config.get("outputs") or ()
        if outputs:
            text += " -> " + ", ".join(outputs)
    return text


def format_flowline(flowline: Flowline) -> str:
    """Render a flowline as canonical GFL.

    Deterministic: bindings first (sorted), four-space indents, children in
    vertex-id order, each vertex expanded at its first occurrence, and
    cross-edges into entry-level siblings emitted as trailing continuation
    blocks. ``parse(format_flowline(f))`` is vertex/edge-isomorphic to ``f``.
    """
    entry = flowline.entry
    bindings: dict[str, tuple] = {}
    for v in flowline.vertices:
        for name, value in (v.config.get("bindings") or {}).items():
            value = tuple(value)
            if name in bindings and bindings[name] != value:
                raise GflError(
                    f"binding {name!r} defined inconsistently across vertices")
            bindings[name] = value

    lines: list[tuple[int, str, str]] = []  # (depth, vertex id, text)
    expanded: set[str] = set()
    entry_children = set(flowline.successors[entry])
    deferred: list[tuple[str, str]] = []

    def expand(vid: str, depth: int) -> None:
        lines.append((depth, vid, _call_text(flowline.node(vid), True)))
        expanded.add(vid)
        for child in flowline.successors[vid]:
            if child in expanded:
                lines.append((depth + 1, child,
                              _call_text(flowline.node(child), False)))
            elif child in entry_children:
                deferred.append((vid, child))
            else:
                expand(child, depth + 1)

    for child in flowline.successors[entry]:
        expand(child, 1)

    by_parent: dict[str, list[str]] = {}
    for parent, child in deferred:
        by_parent.setdefault(parent, []).append(child)
    for parent in sorted(by_parent):
        lines.append((1, parent, _call_text(flowline.node(parent), False)))
        for child in sorted(by_parent[parent]):
            lines.append((2, child, _call_text(flowline.node(child), False)))

    # The outlet marker goes on the exit vertex's first occurrence.
    out = []
    marked = False
    for depth, vid, text in lines:
        if not marked and vid == flowline.exit:
            text += ":"
            marked = True
        out.append(" " * (4 * depth) + "| " + text)

    header = [f"{name} := [" + ", ".join(_format_literal(v) for v in values) + "]"
              for name, values in sorted(bindings.items())]
    return "\n".join(header + [f":{entry}"] + out) + "\n"


# --- DOT export ---------------------------------------------------------------

_DOT_SHAPES = {True: "ellipse", False: "box"}


def emit_dot(flowline: Flowline, name: str = "flowline") -> str:
    """Render the flowline as a Graphviz digraph (deterministic ordering)."""
    lines = [f"digraph {name} {{", "    rankdir=LR;"]
    for v in sorted(flowline.vertices, key=lambda v: v.id):
        attrs = [f"shape={_DOT_SHAPES[v.is_model]}"]
        if v.label and v.label != v.id:
            attrs.append(f'label="{v.label}"')
        lines.append(f'    "{v.id}" [{", ".join(attrs)}];')
    for a, b in sorted(flowline.edges):
        lines.append(f'    "{a}" -> "{b}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
