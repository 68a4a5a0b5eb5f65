"""Python binding for the grammar codec.

Maps stdlib ``ast`` trees onto grammar-typed trees and back.  Node kinds
are the ``ast`` class names, field kinds are the raw field names, and
literal leaves become typed terminal kinds (``t_ident``, ``t_int``, ...).
The grammar itself is derived from a corpus of sources, so it covers
exactly the constructs the corpus uses.
"""

from __future__ import annotations

import ast
from collections.abc import Iterable

from .grammar import (
    LIST,
    ONE,
    ASTNode,
    Grammar,
    GrammarError,
    IncompleteTree,
    Rule,
    UnknownKind,
    is_complete,
)

ROOT_KIND = "root"

# formatting metadata the reprinter rebuilds with defaults
_EXCLUDED_FIELDS = {"type_comment", "type_ignores"}
_EXCLUDED_BY_CLASS = {"Constant": {"kind"}}

T_IDENT = "t_ident"
T_INT = "t_int"
T_FLOAT = "t_float"
T_STR = "t_str"
T_BOOL = "t_bool"
T_NONE = "t_none"
T_BYTES = "t_bytes"
T_COMPLEX = "t_complex"
T_ELLIPSIS = "t_ellipsis"

TERMINAL_KINDS = {
    T_IDENT, T_INT, T_FLOAT, T_STR, T_BOOL, T_NONE, T_BYTES, T_COMPLEX, T_ELLIPSIS,
}


def _included_fields(node: ast.AST) -> list[str]:
    skip = _EXCLUDED_FIELDS | _EXCLUDED_BY_CLASS.get(type(node).__name__, set())
    return [f for f in node._fields if f not in skip]


def _terminal_kind(value, in_constant: bool) -> str:
    # bool first: it subclasses int
    if isinstance(value, bool):
        return T_BOOL
    if isinstance(value, int):
        return T_INT
    if isinstance(value, float):
        return T_FLOAT
    if isinstance(value, complex):
        return T_COMPLEX
    if isinstance(value, str):
        return T_STR if in_constant else T_IDENT
    if isinstance(value, bytes):
        return T_BYTES
    if value is Ellipsis:
        return T_ELLIPSIS
    raise GrammarError(f"unsupported literal {value!r} ({type(value).__name__})")


def _terminal_token(value, kind: str) -> str:
    if kind in (T_STR, T_IDENT):
        return value
    if kind == T_ELLIPSIS:
        return "..."
    return repr(value)


def _terminal_value(kind: str, token: str):
    if kind in (T_STR, T_IDENT):
        return token
    if kind == T_INT:
        return int(token)
    if kind == T_FLOAT:
        return float(token)
    if kind == T_BOOL:
        return token == "True"
    if kind == T_NONE:
        return None
    if kind == T_COMPLEX:
        return complex(token)
    if kind == T_BYTES:
        return ast.literal_eval(token)
    if kind == T_ELLIPSIS:
        return Ellipsis
    raise GrammarError(f"unknown terminal kind {kind!r}")


class _RuleTable:
    """Collects rule signatures during conversion; can also enforce a grammar."""

    def __init__(self, grammar: Grammar | None = None):
        self.grammar = grammar
        self.signatures: set[tuple] = set()
        self._nullary: set[str] = set()

    def use(self, head: str, children: tuple[tuple[str, str], ...]) -> int | None:
        if self.grammar is not None:
            return self.grammar.lookup(head, children).id
        self.signatures.add((head, children))
        return None

    def use_nullary(self, kind: str) -> int | None:
        return self.use(kind, ())


def _convert(node: ast.AST, table: _RuleTable) -> ASTNode:
    cls = type(node).__name__
    fields = _included_fields(node)
    children_spec = []
    field_nodes = []
    for name in fields:
        value = getattr(node, name, None)
        card = LIST if isinstance(value, list) else ONE
        children_spec.append((name, card))
        field_nodes.append((name, card, value))
    out = ASTNode(kind=cls)
    out.rule_id = table.use(cls, tuple(children_spec))
    for name, card, value in field_nodes:
        fnode = ASTNode(kind=name, is_list=(card == LIST))
        if card == LIST:
            for elem in value:
                child = _convert_value(name, elem, cls, table)
                table.use(name, ((child.kind, ONE),))  # the append rule
                fnode.children.append(child)
            fnode.rule_id = table.use_nullary(name)
        elif value is None:
            fnode.rule_id = table.use_nullary(name)
        else:
            fnode.children.append(_convert_value(name, value, cls, table))
            child_kind = fnode.children[0].kind
            fnode.rule_id = table.use(name, ((child_kind, ONE),))
        out.children.append(fnode)
    return out


def _convert_value(field_name: str, value, parent_cls: str, table: _RuleTable) -> ASTNode:
    if isinstance(value, ast.AST):
        return _convert(value, table)
    if value is None:
        # None inside a list slot (e.g. keyword-only defaults)
        return ASTNode(kind=T_NONE, token="None")
    in_constant = parent_cls == "Constant" and field_name == "value"
    kind = _terminal_kind(value, in_constant)
    return ASTNode(kind=kind, token=_terminal_token(value, kind))


def parse_to_ast(source: str, grammar: Grammar) -> ASTNode:
    """Parse Python source into a grammar-typed tree (root kind ``root``).

    Raises SyntaxError for invalid source and UnknownKind when the source
    uses a construct outside the grammar.
    """
    module = ast.parse(source)
    table = _RuleTable(grammar)
    tree = ASTNode(kind=ROOT_KIND)
    tree.rule_id = table.use(ROOT_KIND, (("Module", ONE),))
    tree.children.append(_convert(module, table))
    return tree


def tree_to_pyast(node: ASTNode):
    """Rebuild a stdlib ``ast`` object (or literal) from a complete tree."""
    if node.kind == ROOT_KIND:
        return tree_to_pyast(node.children[0])
    if node.kind in TERMINAL_KINDS:
        return _terminal_value(node.kind, node.token)
    cls = getattr(ast, node.kind, None)
    if cls is None or not (isinstance(cls, type) and issubclass(cls, ast.AST)):
        raise GrammarError(f"kind {node.kind!r} is not a Python AST constructor")
    kwargs = {}
    for fnode in node.children:
        if fnode.is_list:
            kwargs[fnode.kind] = [tree_to_pyast(c) for c in fnode.children]
        elif not fnode.children:
            kwargs[fnode.kind] = None
        else:
            kwargs[fnode.kind] = tree_to_pyast(fnode.children[0])
    for name in cls._fields:
        if name in kwargs:
            continue
        # excluded metadata fields get neutral defaults
        kwargs[name] = [] if name == "type_ignores" else None
    obj = cls(**kwargs)
    return ast.fix_missing_locations(obj) if isinstance(obj, ast.Module) else obj


def ast_to_code(tree: ASTNode, grammar: Grammar | None = None) -> str:
    """Reprint a complete tree as format-normalized Python source."""
    if grammar is not None and not is_complete(tree, grammar):
        raise IncompleteTree("cannot print a partial tree")
    module = tree_to_pyast(tree)
    if not isinstance(module, ast.Module):
        raise GrammarError("tree root does not rebuild to a module")
    return ast.unparse(ast.fix_missing_locations(module))


def normalize_source(source: str) -> str:
    """Canonical reprint of parseable source (parse -> unparse)."""
    return ast.unparse(ast.parse(source))


def grammar_from_corpus(sources: Iterable[str]) -> Grammar:
    """Derive the production-rule grammar covering every given source."""
    table = _RuleTable(None)
    table.use(ROOT_KIND, (("Module", ONE),))
    any_source = False
    for source in sources:
        any_source = True
        module = ast.parse(source)
        root = ASTNode(kind=ROOT_KIND)
        root.children.append(_convert(module, table))
    if not any_source:
        raise GrammarError("empty corpus")
    # every list slot needs its closing nullary rule even if never seen empty
    heads_with_lists = set()
    for head, children in table.signatures:
        for kind, card in children:
            if card == LIST:
                heads_with_lists.add(kind)
    for kind in heads_with_lists:
        table.signatures.add((kind, ()))
    rules = [
        Rule(id=i, head=head, children=children)
        for i, (head, children) in enumerate(sorted(table.signatures))
    ]
    terminals = set()
    heads = {head for head, _ in table.signatures}
    for head, children in table.signatures:
        for kind, _ in children:
            if kind in TERMINAL_KINDS:
                terminals.add(kind)
            elif kind not in heads:
                raise UnknownKind(f"derived child kind {kind!r} has no rules")
    return Grammar(rules, terminals)


def structurally_equal(a: ASTNode, b: ASTNode) -> bool:
    return a == b
