"""Production-rule grammars and the tree/rule-sequence codec.

A grammar is a flat list of rules ``head -> child-kind[, child-kind...]``
where a trailing ``*`` on a child kind marks a list-valued slot.  Trees are
built by expanding the leftmost unexpanded node with a rule whose head
matches the node's kind; terminal kinds are filled with surface tokens.
List slots grow one element per rule application and are closed by the
head kind's nullary rule (which doubles as the "None" marker for optional
single slots).

The whole module is deliberately language-agnostic: the Python binding
lives in :mod:`itergen.pycode`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

ONE = "one"
LIST = "list"


class GrammarError(Exception):
    """Base class for grammar and replay failures."""


class DuplicateRule(GrammarError):
    pass


class UnknownKind(GrammarError):
    pass


class IllegalExpansion(GrammarError):
    """An action's head kind does not match the frontier kind."""


class IncompleteTree(GrammarError):
    pass


class NoFrontier(GrammarError):
    pass


@dataclass(frozen=True)
class Rule:
    """One production: ``head -> children``, children as (kind, ONE|LIST)."""

    id: int
    head: str
    children: tuple[tuple[str, str], ...]

    @property
    def nullary(self) -> bool:
        return not self.children

    def signature(self) -> tuple:
        return (self.head, self.children)


class Grammar:
    """An immutable, validated rule set.

    Rule ids are dense 0..n-1.  ``node_kinds`` is the set of rule heads;
    ``terminal_kinds`` are kinds that are filled with tokens instead of
    expanded.
    """

    def __init__(self, rules: list[Rule], terminal_kinds: set[str]):
        self.rules: tuple[Rule, ...] = tuple(rules)
        self.terminal_kinds: frozenset[str] = frozenset(terminal_kinds)
        self.node_kinds: frozenset[str] = frozenset(r.head for r in self.rules)
        self.rules_by_head: dict[str, list[Rule]] = {}
        self._by_signature: dict[tuple, Rule] = {}
        self._validate()
        for r in self.rules:
            self.rules_by_head.setdefault(r.head, []).append(r)
            self._by_signature[r.signature()] = r
        # stable kind inventory for embeddings and masks
        self.all_kinds: tuple[str, ...] = tuple(
            sorted(self.node_kinds | self.terminal_kinds | self._child_kinds())
        )
        self._min_cost = self._completion_costs()

    def _child_kinds(self) -> set[str]:
        out = set()
        for r in self.rules:
            for kind, _ in r.children:
                out.add(kind)
        return out

    def _validate(self) -> None:
        seen_ids = set()
        seen_sigs = set()
        for i, r in enumerate(self.rules):
            if r.id != i:
                raise DuplicateRule(f"rule ids must be dense, got id {r.id} at index {i}")
            if r.id in seen_ids:
                raise DuplicateRule(f"duplicate rule id {r.id}")
            seen_ids.add(r.id)
            if r.signature() in seen_sigs:
                raise DuplicateRule(f"duplicate rule {r.head} -> {r.children}")
            seen_sigs.add(r.signature())
            if r.head in self.terminal_kinds:
                raise GrammarError(f"terminal kind {r.head!r} cannot head a rule")
        heads = {r.head for r in self.rules}
        list_kinds = set()
        for r in self.rules:
            for kind, card in r.children:
                if kind not in heads and kind not in self.terminal_kinds:
                    raise UnknownKind(f"child kind {kind!r} has no rules and is not terminal")
                if card == LIST:
                    if kind in self.terminal_kinds:
                        raise GrammarError(f"list slot of terminal kind {kind!r} not supported")
                    list_kinds.add(kind)
        for kind in list_kinds:
            kind_rules = [r for r in self.rules if r.head == kind]
            if not any(r.nullary for r in kind_rules):
                raise GrammarError(f"list kind {kind!r} has no closing (nullary) rule")
            for r in kind_rules:
                if not r.nullary and len(r.children) != 1:
                    raise GrammarError(
                        f"rule {r.id} heads list kind {kind!r} but has {len(r.children)} children"
                    )

    def rule(self, rule_id: int) -> Rule:
        if not 0 <= rule_id < len(self.rules):
            raise UnknownKind(f"no rule with id {rule_id}")
        return self.rules[rule_id]

    def lookup(self, head: str, children: tuple[tuple[str, str], ...]) -> Rule:
        try:
            return self._by_signature[(head, children)]
        except KeyError:
            raise UnknownKind(f"no rule {head} -> {children}") from None

    def legal_rule_ids(self, kind: str) -> list[int]:
        return [r.id for r in self.rules_by_head.get(kind, [])]

    def is_terminal(self, kind: str) -> bool:
        return kind in self.terminal_kinds

    def __len__(self) -> int:
        return len(self.rules)

    def _completion_costs(self) -> dict[str, int]:
        """Min actions to fully expand a node of each kind (for tree sampling)."""
        INF = 10 ** 9
        cost = {k: 1 for k in self.terminal_kinds}
        for k in self.node_kinds:
            cost.setdefault(k, INF)
        for _ in range(len(self.node_kinds) + 2):
            changed = False
            for r in self.rules:
                c = 1
                for kind, card in r.children:
                    # an empty list closes in one extra action
                    c += 1 if card == LIST else cost.get(kind, INF)
                if c < cost[r.head]:
                    cost[r.head] = c
                    changed = True
            if not changed:
                break
        return cost


@dataclass
class ASTNode:
    """A (possibly partial) grammar-typed tree node.

    ``rule_id`` is None while the node is unexpanded (or, for a list node,
    while the list is still open); terminals carry ``token`` instead of a
    rule.  ``is_list`` marks list-container nodes created by a starred slot.
    """

    kind: str
    rule_id: int | None = None
    children: list["ASTNode"] = field(default_factory=list)
    token: str | None = None
    is_list: bool = False


@dataclass(frozen=True)
class ApplyRule:
    rule_id: int


@dataclass(frozen=True)
class FillTerminal:
    token: str


Action = ApplyRule | FillTerminal


@dataclass(frozen=True)
class RuleSequence:
    """Pre-order action serialization of a tree; ``partial`` marks prefixes."""

    actions: tuple[Action, ...]
    partial: bool = False

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class TreePath:
    """Root-to-node chain of (kind, index-within-parent) pairs."""

    nodes: tuple[tuple[str, int], ...]

    def kinds(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def new_tree(root_kind: str) -> ASTNode:
    return ASTNode(kind=root_kind)


def _find_frontier(node: ASTNode, grammar: Grammar) -> ASTNode | None:
    if grammar.is_terminal(node.kind):
        return node if node.token is None else None
    if node.is_list:
        # elements complete left to right, then the open list itself
        for child in node.children:
            found = _find_frontier(child, grammar)
            if found is not None:
                return found
        return node if node.rule_id is None else None
    if node.rule_id is None:
        return node
    for child in node.children:
        found = _find_frontier(child, grammar)
        if found is not None:
            return found
    return None


def frontier(partial: ASTNode, grammar: Grammar) -> ASTNode:
    """Leftmost depth-first unexpanded node; raises NoFrontier when complete."""
    found = _find_frontier(partial, grammar)
    if found is None:
        raise NoFrontier("tree is complete")
    return found


def is_complete(node: ASTNode, grammar: Grammar) -> bool:
    return _find_frontier(node, grammar) is None


def _make_child(kind: str, card: str) -> ASTNode:
    return ASTNode(kind=kind, is_list=(card == LIST))


def apply_action(tree: ASTNode, action: Action, grammar: Grammar) -> ASTNode:
    """Expand the current frontier in place; returns the node acted upon."""
    node = frontier(tree, grammar)
    if isinstance(action, FillTerminal):
        if not grammar.is_terminal(node.kind):
            raise IllegalExpansion(f"cannot fill non-terminal {node.kind!r}")
        node.token = action.token
        return node
    rule = grammar.rule(action.rule_id)
    if grammar.is_terminal(node.kind):
        raise IllegalExpansion(f"terminal {node.kind!r} expects a token, got rule {rule.id}")
    if rule.head != node.kind:
        raise IllegalExpansion(
            f"rule {rule.id} head {rule.head!r} does not match frontier kind {node.kind!r}"
        )
    if node.is_list:
        if rule.nullary:
            node.rule_id = rule.id  # close the list
        else:
            (kind, card), = rule.children
            node.children.append(_make_child(kind, card))
    else:
        node.rule_id = rule.id
        for kind, card in rule.children:
            node.children.append(_make_child(kind, card))
    return node


def rules_to_ast(rules: RuleSequence, grammar: Grammar, root_kind: str = "root") -> ASTNode:
    """Replay a rule sequence into a tree; prefixes yield partial trees."""
    tree = new_tree(root_kind)
    for action in rules.actions:
        apply_action(tree, action, grammar)
    return tree


def ast_to_rules(ast: ASTNode, grammar: Grammar) -> RuleSequence:
    """Pre-order, leftmost-first action serialization of a complete tree."""
    if not is_complete(ast, grammar):
        raise IncompleteTree("tree still has an unexpanded frontier")
    actions: list[Action] = []

    def emit(node: ASTNode) -> None:
        if grammar.is_terminal(node.kind):
            actions.append(FillTerminal(node.token))
            return
        if node.is_list:
            for child in node.children:
                # the append action is the unique head->child rule
                actions.append(ApplyRule(grammar.lookup(node.kind, ((child.kind, ONE),)).id))
                emit(child)
            actions.append(ApplyRule(node.rule_id))
            return
        actions.append(ApplyRule(node.rule_id))
        for child in node.children:
            emit(child)

    emit(ast)
    return RuleSequence(actions=tuple(actions))


def tree_path(partial: ASTNode, node: ASTNode) -> TreePath:
    """(kind, child-index) pairs from the root down to ``node`` inclusive."""
    chain: list[tuple[str, int]] = []

    def walk(cur: ASTNode, idx: int) -> bool:
        chain.append((cur.kind, idx))
        if cur is node:
            return True
        for i, child in enumerate(cur.children):
            if walk(child, i):
                return True
        chain.pop()
        return False

    if not walk(partial, 0):
        raise GrammarError("node is not part of the given tree")
    return TreePath(nodes=tuple(chain))


def replay_with_paths(
    rules: RuleSequence, grammar: Grammar, root_kind: str = "root"
) -> tuple[ASTNode, list[tuple[str, TreePath]]]:
    """Replay actions, recording (frontier kind, tree path) before each one."""
    tree = new_tree(root_kind)
    steps: list[tuple[str, TreePath]] = []
    for action in rules.actions:
        node = frontier(tree, grammar)
        steps.append((node.kind, tree_path(tree, node)))
        apply_action(tree, action, grammar)
    return tree, steps


# ---------------------------------------------------------------------------
# random tree sampling (round-trip fuzzing and the synthetic corpus)


def random_tree(
    grammar: Grammar,
    rng: random.Random,
    root_kind: str = "root",
    max_depth: int = 12,
    token_pools: dict[str, list[str]] | None = None,
    list_continue: float = 0.5,
) -> ASTNode:
    """Sample a complete tree; beyond max_depth the cheapest rules win."""
    pools = token_pools or {}
    tree = new_tree(root_kind)
    guard = 0
    while not is_complete(tree, grammar):
        guard += 1
        if guard > 100_000:
            raise GrammarError("random_tree failed to terminate")
        node = frontier(tree, grammar)
        depth = len(tree_path(tree, node))
        if grammar.is_terminal(node.kind):
            pool = pools.get(node.kind, ["tok"])
            apply_action(tree, FillTerminal(rng.choice(pool)), grammar)
            continue
        candidates = grammar.rules_by_head[node.kind]
        if node.is_list:
            closing = [r for r in candidates if r.nullary]
            growing = [r for r in candidates if not r.nullary]
            if growing and depth < max_depth and rng.random() < list_continue:
                rule = rng.choice(growing)
            else:
                rule = closing[0]
        elif depth >= max_depth:
            rule = min(
                candidates,
                key=lambda r: sum(
                    1 if c == LIST else grammar._min_cost.get(k, 10 ** 9)
                    for k, c in r.children
                ),
            )
        else:
            rule = rng.choice(candidates)
        apply_action(tree, ApplyRule(rule.id), grammar)
    return tree


# ---------------------------------------------------------------------------
# on-disk formats


def dump_grammar(grammar: Grammar) -> str:
    """One rule per line: ``Head -> kind[*] , kind[*] ...``."""
    lines = []
    for r in grammar.rules:
        rhs = " , ".join(k + ("*" if c == LIST else "") for k, c in r.children)
        lines.append(f"{r.head} -> {rhs}".rstrip())
    return "\n".join(lines) + "\n"


def load_grammar(text: str) -> Grammar:
    """Parse the rule-per-line format; terminal kinds are the headless kinds."""
    rules: list[Rule] = []
    referenced: set[str] = set()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "->" not in line:
            raise GrammarError(f"malformed rule line: {raw!r}")
        head, _, rhs = line.partition("->")
        head = head.strip()
        if not head:
            raise GrammarError(f"malformed rule line: {raw!r}")
        children: list[tuple[str, str]] = []
        rhs = rhs.strip()
        if rhs:
            for part in rhs.split(","):
                part = part.strip()
                if not part:
                    raise GrammarError(f"malformed rule line: {raw!r}")
                if part.endswith("*"):
                    children.append((part[:-1].strip(), LIST))
                else:
                    children.append((part, ONE))
        rules.append(Rule(id=len(rules), head=head, children=tuple(children)))
        referenced.update(k for k, _ in children)
    heads = {r.head for r in rules}
    terminal_kinds = referenced - heads
    return Grammar(rules, terminal_kinds)


def dump_rules(rules: RuleSequence) -> str:
    """One action per line: ``R<id>`` or ``T<escaped token>``."""
    lines = []
    for action in rules.actions:
        if isinstance(action, ApplyRule):
            lines.append(f"R{action.rule_id}")
        else:
            lines.append("T" + action.token.encode("unicode_escape").decode("ascii"))
    return "\n".join(lines) + "\n"


def load_rules(text: str) -> RuleSequence:
    actions: list[Action] = []
    for raw in text.splitlines():
        if not raw:
            continue
        if raw[0] == "R":
            actions.append(ApplyRule(int(raw[1:])))
        elif raw[0] == "T":
            actions.append(FillTerminal(raw[1:].encode("ascii").decode("unicode_escape")))
        else:
            raise GrammarError(f"malformed action line: {raw!r}")
    return RuleSequence(actions=tuple(actions))
