"""Sample-to-tensor preparation shared by training and generation."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..grammar import ApplyRule, FillTerminal, Grammar, TreePath, replay_with_paths
from ..textdata import EncodedSample, Vocabs


class ActionSpace:
    """Joint index space: grammar rules first, then terminal vocabulary."""

    def __init__(self, grammar: Grammar, vocabs: Vocabs):
        self.grammar = grammar
        self.vocabs = vocabs
        self.n_rules = len(grammar)
        self.n_actions = self.n_rules + len(vocabs.terminals)
        self.pad_index = self.n_rules + vocabs.terminals.pad_id
        # kind rows: 0 is padding, real kinds start at 1
        self.kind_index = {k: i + 1 for i, k in enumerate(grammar.all_kinds)}
        self.n_kinds = len(grammar.all_kinds)

    def action_index(self, action) -> int:
        if isinstance(action, ApplyRule):
            return action.rule_id
        return self.n_rules + self.vocabs.terminals.encode(action.token)

    def index_to_action(self, index: int):
        if index < self.n_rules:
            return ApplyRule(index)
        return FillTerminal(self.vocabs.terminals.decode(index - self.n_rules))

    def legality_matrix(self) -> torch.Tensor:
        """(n_kinds + 1, n_actions) bool; row 0 (padding) is all False."""
        table = torch.zeros(self.n_kinds + 1, self.n_actions, dtype=torch.bool)
        for kind, row in self.kind_index.items():
            if self.grammar.is_terminal(kind):
                table[row, self.n_rules:] = True
                table[row, self.n_rules + self.vocabs.terminals.pad_id] = False
                table[row, self.n_rules + self.vocabs.terminals.copy_id] = False
            else:
                for rid in self.grammar.legal_rule_ids(kind):
                    table[row, rid] = True
        return table

    def path_ids(self, path: TreePath, path_max: int) -> list[int]:
        kinds = path.kinds()[-path_max:]  # keep the frontier end when deep
        ids = [self.kind_index.get(k, 0) for k in kinds]
        return [0] * (path_max - len(ids)) + ids


@dataclass
class PreparedSample:
    """All id sequences for one sample, ready to pad into a batch."""

    sample_id: str
    nl_ids: list[int]
    nl_char_ids: list[list[int]]
    nl_tokens: tuple[str, ...]
    test_ids: list[int]
    test_char_ids: list[list[int]]
    code_action_ids: list[int]
    target_action_ids: list[int]
    step_kind_ids: list[int]
    step_is_terminal: list[bool]
    path_ids: list[list[int]]
    copy_hits: dict[int, tuple[int, ...]]


def _char_rows(tokens, vocabs: Vocabs) -> list[list[int]]:
    rows = []
    for token in tokens:
        ids = vocabs.char_ids(token)
        rows.append(ids + [0] * (vocabs.s_max - len(ids)))
    return rows


def prepare_sample(
    sample: EncodedSample,
    space: ActionSpace,
    grammar: Grammar,
    path_max: int,
    need_target: bool = True,
) -> PreparedSample:
    vocabs = space.vocabs
    nl_tokens = sample.nl.tokens
    test_tokens = sample.test_info.tokens
    target_ids: list[int] = []
    step_kinds: list[int] = []
    step_terminal: list[bool] = []
    paths: list[list[int]] = []
    copy_hits: dict[int, tuple[int, ...]] = {}
    if need_target:
        if sample.target_rules is None:
            raise ValueError(f"{sample.sample_id}: no target rules to train on")
        _, steps = replay_with_paths(sample.target_rules, grammar)
        for step, ((kind, path), action) in enumerate(
            zip(steps, sample.target_rules.actions)
        ):
            target_ids.append(space.action_index(action))
            step_kinds.append(space.kind_index[kind])
            step_terminal.append(isinstance(action, FillTerminal))
            paths.append(space.path_ids(path, path_max))
        copy_hits = dict(sample.copy_map)
    return PreparedSample(
        sample_id=sample.sample_id,
        nl_ids=[vocabs.text_id(t) for t in nl_tokens],
        nl_char_ids=_char_rows(nl_tokens, vocabs),
        nl_tokens=nl_tokens,
        test_ids=[vocabs.text_id(t) for t in test_tokens],
        test_char_ids=_char_rows(test_tokens, vocabs),
        code_action_ids=[space.action_index(a) for a in sample.last_rules.actions],
        target_action_ids=target_ids,
        step_kind_ids=step_kinds,
        step_is_terminal=step_terminal,
        path_ids=paths,
        copy_hits=copy_hits,
    )


@dataclass
class Batch:
    nl_ids: torch.Tensor          # (B, L)
    nl_mask: torch.Tensor
    nl_char_ids: torch.Tensor     # (B, L, S)
    test_ids: torch.Tensor        # (B, Lt)
    test_mask: torch.Tensor
    test_char_ids: torch.Tensor
    code_ids: torch.Tensor        # (B, P)
    code_mask: torch.Tensor
    target_ids: torch.Tensor      # (B, T)
    target_mask: torch.Tensor
    step_kind_ids: torch.Tensor   # (B, T)
    step_is_terminal: torch.Tensor
    path_ids: torch.Tensor        # (B, T, path_max)
    copy_targets: torch.Tensor    # (B, T, L)

    @property
    def size(self) -> int:
        return self.nl_ids.shape[0]


def _pad2(rows: list[list[int]], pad: int) -> torch.Tensor:
    width = max((len(r) for r in rows), default=0)
    out = torch.full((len(rows), width), pad, dtype=torch.long)
    for i, r in enumerate(rows):
        if r:
            out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return out


def _pad3(rows: list[list[list[int]]], inner: int) -> torch.Tensor:
    width = max((len(r) for r in rows), default=0)
    out = torch.zeros(len(rows), width, inner, dtype=torch.long)
    for i, r in enumerate(rows):
        for j, ids in enumerate(r):
            out[i, j] = torch.tensor(ids, dtype=torch.long)
    return out


def collate(samples: list[PreparedSample], space: ActionSpace, path_max: int) -> Batch:
    nl_ids = _pad2([s.nl_ids for s in samples], 0)
    nl_mask = _pad2([[1] * len(s.nl_ids) for s in samples], 0).bool()
    nl_chars = _pad3([s.nl_char_ids for s in samples], space.vocabs.s_max)
    test_ids = _pad2([s.test_ids for s in samples], 0)
    test_mask = _pad2([[1] * len(s.test_ids) for s in samples], 0).bool()
    test_chars = _pad3([s.test_char_ids for s in samples], space.vocabs.s_max)
    code_ids = _pad2([s.code_action_ids for s in samples], space.pad_index)
    code_mask = _pad2([[1] * len(s.code_action_ids) for s in samples], 0).bool()
    target_ids = _pad2([s.target_action_ids for s in samples], space.pad_index)
    target_mask = _pad2([[1] * len(s.target_action_ids) for s in samples], 0).bool()
    step_kinds = _pad2([s.step_kind_ids for s in samples], 0)
    step_term = _pad2([[int(x) for x in s.step_is_terminal] for s in samples], 0).bool()
    paths = _pad3([s.path_ids for s in samples], path_max)
    b, t = target_ids.shape
    l = nl_ids.shape[1]
    copy_targets = torch.zeros(b, t, l)
    for i, s in enumerate(samples):
        for step, hits in s.copy_hits.items():
            for pos in hits:
                copy_targets[i, step, pos] = 1.0
    return Batch(
        nl_ids=nl_ids, nl_mask=nl_mask, nl_char_ids=nl_chars,
        test_ids=test_ids, test_mask=test_mask, test_char_ids=test_chars,
        code_ids=code_ids, code_mask=code_mask,
        target_ids=target_ids, target_mask=target_mask,
        step_kind_ids=step_kinds, step_is_terminal=step_term,
        path_ids=paths, copy_targets=copy_targets,
    )
