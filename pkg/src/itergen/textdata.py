"""Tokenization, vocabularies, and encoded training/inference samples."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .grammar import FillTerminal, Grammar, RuleSequence
from .pycode import parse_to_ast
from . import grammar as G

PAD = "<pad>"
UNK = "<unk>"
COPY = "<copy>"
RESERVED = (PAD, UNK, COPY)

_PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^`{|}~")


class EncodingError(Exception):
    pass


class UnparseableReference(EncodingError):
    pass


def tokenize(text: str) -> "TokenizedText":
    """Whitespace split, then each punctuation character as its own token.

    Tokens keep their original case; lowercasing happens at vocabulary
    lookup so that copied tokens keep the surface form.
    """
    tokens: list[str] = []
    for chunk in text.split():
        buf = ""
        for ch in chunk:
            if ch in _PUNCT:
                if buf:
                    tokens.append(buf)
                    buf = ""
                tokens.append(ch)
            else:
                buf += ch
        if buf:
            tokens.append(buf)
    return TokenizedText(tokens=tuple(tokens))


def split_chars(token: str, s_max: int | None = None) -> tuple[str, ...]:
    chars = tuple(token)
    if s_max is not None:
        chars = chars[:s_max]
    return chars


@dataclass(frozen=True)
class TokenizedText:
    """Tokens plus per-token character lists (capped at encode time)."""

    tokens: tuple[str, ...]

    @property
    def length(self) -> int:
        return len(self.tokens)

    def chars(self, s_max: int) -> tuple[tuple[str, ...], ...]:
        return tuple(split_chars(t, s_max) for t in self.tokens)

    def joined(self) -> str:
        return " ".join(self.tokens)


EMPTY_TEXT = TokenizedText(tokens=())
EMPTY_RULES = RuleSequence(actions=())


class Vocab:
    """Frozen token<->id map with PAD/UNK/COPY reserved up front."""

    def __init__(self, tokens: list[str]):
        self.id_to_token: list[str] = list(RESERVED) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise EncodingError("duplicate tokens in vocabulary")

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def copy_id(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def to_list(self) -> list[str]:
        return self.id_to_token[len(RESERVED):]


def build_vocab(texts: list[list[str]] | list[tuple[str, ...]], min_freq: int = 1) -> Vocab:
    """Frequency-thresholded vocabulary; below-threshold tokens become UNK."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for seq in texts:
        counts.update(seq)
    if not counts:
        raise EncodingError("cannot build a vocabulary from an empty corpus")
    kept = sorted(t for t, n in counts.items() if n >= min_freq)
    return Vocab(kept)


@dataclass
class Vocabs:
    """All lookup tables one model needs, built once from the training split."""

    text: Vocab          # NL + test-info tokens, matched lowercased
    chars: Vocab
    terminals: Vocab     # code terminal tokens, case-sensitive
    s_max: int = 16

    def text_id(self, token: str) -> int:
        return self.text.encode(token.lower())

    def char_ids(self, token: str) -> list[int]:
        return [self.chars.encode(c) for c in split_chars(token.lower(), self.s_max)]


def build_vocabs(
    nl_texts: list[TokenizedText],
    aux_texts: list[TokenizedText],
    terminal_tokens: list[str],
    min_freq_text: int = 2,
    min_freq_terminals: int = 1,
    s_max: int = 16,
) -> Vocabs:
    token_rows = [[t.lower() for t in x.tokens] for x in nl_texts + aux_texts]
    char_rows = [list(tok) for row in token_rows for tok in row]
    text = build_vocab(token_rows or [["<empty>"]], min_freq=min_freq_text)
    chars = build_vocab(char_rows or [["?"]], min_freq=1)
    terminals = build_vocab([terminal_tokens or ["<none>"]], min_freq=min_freq_terminals)
    return Vocabs(text=text, chars=chars, terminals=terminals, s_max=s_max)


@dataclass
class EncodedSample:
    """One model input: NL, optional feedback channels, and the target."""

    sample_id: str
    nl: TokenizedText
    test_info: TokenizedText = EMPTY_TEXT
    last_rules: RuleSequence = EMPTY_RULES
    target_rules: RuleSequence | None = None
    copy_map: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def first_round(self) -> bool:
        return self.test_info.length == 0 and len(self.last_rules) == 0


def terminal_tokens_of(rules: RuleSequence) -> list[str]:
    return [a.token for a in rules.actions if isinstance(a, FillTerminal)]


def unk_rate(samples: list["EncodedSample"], vocabs: "Vocabs") -> float:
    """Fraction of NL/test tokens that fall back to the unknown id."""
    total = 0
    unknown = 0
    for sample in samples:
        for text in (sample.nl, sample.test_info):
            for token in text.tokens:
                total += 1
                unknown += vocabs.text_id(token) == vocabs.text.unk_id
    return unknown / total if total else 0.0


def copy_positions(nl: TokenizedText, rules: RuleSequence) -> dict[int, tuple[int, ...]]:
    """Map each terminal-fill step index to the NL positions with that token."""
    out: dict[int, tuple[int, ...]] = {}
    for step, action in enumerate(rules.actions):
        if isinstance(action, FillTerminal):
            hits = tuple(i for i, t in enumerate(nl.tokens) if t == action.token)
            if hits:
                out[step] = hits
    return out


def encode_sample(
    sample_id: str,
    nl_text: str,
    code: str,
    grammar: Grammar,
    test_info_text: str = "",
    last_rules: RuleSequence = EMPTY_RULES,
) -> EncodedSample:
    """Build the model-facing sample for one corpus record."""
    nl = tokenize(nl_text)
    test_info = tokenize(test_info_text) if test_info_text else EMPTY_TEXT
    try:
        target = G.ast_to_rules(parse_to_ast(code, grammar), grammar)
    except (SyntaxError, G.GrammarError) as err:
        raise UnparseableReference(f"{sample_id}: {err}") from err
    return EncodedSample(
        sample_id=sample_id,
        nl=nl,
        test_info=test_info,
        last_rules=last_rules,
        target_rules=target,
        copy_map=copy_positions(nl, target),
    )
