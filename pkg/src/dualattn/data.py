"""Synthetic sentence-pair tasks, toy robustness perturbations, and file formats.

Files:

* dataset TSV: ``s1<TAB>s2<TAB>label`` with space-joined tokens;
* vocabulary: one token per line, line index = token id; the first four
  lines are the reserved ``[PAD] [CLS] [SEP] [UNK]``;
* lexicon: ``relation<TAB>token<TAB>token`` where relation is ``antonym``,
  ``synonym`` or ``class`` (second field a token, third its word class).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .rng import Xoshiro256

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
RESERVED = (PAD, CLS, SEP, UNK)
TASKS = ("paraphrase", "antonym_swap", "number_swap")
PERTURBATIONS = ("SwapAnt", "NumWord", "AddPunc", "SwapSyn", "InsertAdv")
MAX_PAIR_TOKENS = 21


class CapacityError(ValueError):
    """More examples requested than the templates can produce."""


class DataFormatError(ValueError):
    """Malformed dataset, vocabulary or lexicon file."""


class NotApplicable(Exception):
    """A perturbation cannot be applied to this example; the caller should skip it."""


@dataclass(frozen=True)
class SentencePairExample:
    s1: tuple[str, ...]
    s2: tuple[str, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "s1", tuple(self.s1))
        object.__setattr__(self, "s2", tuple(self.s2))
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


# -- lexicon ----------------------------------------------------------------

# Antonym concept pairs; position k of one synonym set is the antonym of
# position k of the other, which keeps the antonym map an involution.
_ADJ_PAIRS = [
    (("big", "large"), ("small", "little")),
    (("hot", "warm"), ("cold", "cool")),
    (("fast", "quick"), ("slow", "sluggish")),
    (("happy", "glad"), ("sad", "unhappy")),
    (("old", "ancient"), ("new", "modern")),
    (("good", "fine"), ("bad", "awful")),
    (("strong", "sturdy"), ("weak", "frail")),
    (("clean", "tidy"), ("dirty", "messy")),
    (("bright", "shiny"), ("dark", "dim")),
    (("full", "filled"), ("empty", "vacant")),
    (("loud", "noisy"), ("quiet", "silent")),
    (("heavy", "weighty"), ("light", "slight")),
]
_NOUNS = [("car", "auto"), ("house", "home"), ("road", "street"), ("bag", "sack"),
          ("cup", "mug"), ("stone", "rock"), ("box",), ("dog",), ("cat",), ("tree",),
          ("book",), ("ball",), ("door",), ("room",), ("city",), ("river",), ("table",),
          ("chair",)]
_PLURALS = [("cups", "mugs"), ("stones", "rocks"), ("kids", "children"), ("apples",),
            ("eggs",), ("coins",), ("pens",), ("cards",), ("birds",), ("digits",)]
_COPULAS = [("is",), ("looks", "seems"), ("feels",)]
_INTRANS = [("stays", "remains"), ("sits",), ("waits",), ("stands",)]
_TRANS = [("buy", "purchase"), ("need", "require"), ("want", "desire"), ("see",),
          ("find", "discover"), ("count",)]
_NUMBERS = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "15", "20",
            "24", "42", "50", "100"]
_ADVERBS = ["really", "truly", "clearly", "surely", "often", "usually"]
_PUNCT = [",", ".", "!", "?", ";"]
_FUNCTION = ["the", "this", "my", "her", "i", "we", "they", "think", "know", "that", "very",
             "so", "today", "here", "how", "many", "have", "has", "sum", "of", "there",
             "are", "in"]


@dataclass
class Lexicon:
    word_class: dict[str, str] = field(default_factory=dict)
    synonyms: dict[str, tuple[str, ...]] = field(default_factory=dict)
    antonym: dict[str, str] = field(default_factory=dict)

    def add(self, token: str, cls: str) -> None:
        prev = self.word_class.get(token)
        if prev is not None and prev != cls:
            raise DataFormatError(f"token {token!r} is in classes {prev!r} and {cls!r}")
        self.word_class[token] = cls

    def add_synonyms(self, a: str, b: str) -> None:
        for x, y in ((a, b), (b, a)):
            cur = self.synonyms.get(x, ())
            if y not in cur:
                self.synonyms[x] = cur + (y,)

    def add_antonyms(self, a: str, b: str) -> None:
        for x, y in ((a, b), (b, a)):
            if self.antonym.get(x, y) != y:
                raise DataFormatError(f"token {x!r} has two antonyms")
            self.antonym[x] = y

    def of_class(self, cls: str) -> list[str]:
        return [t for t, c in self.word_class.items() if c == cls]

    def synset(self, token: str) -> tuple[str, ...]:
        return (token,) + self.synonyms.get(token, ())

    def tokens(self) -> list[str]:
        return list(self.word_class)

    def write(self, path) -> None:
        lines = [f"class\t{t}\t{c}" for t, c in self.word_class.items()]
        done = set()
        for a, others in self.synonyms.items():
            for b in others:
                if (b, a) not in done:
                    done.add((a, b))
                    lines.append(f"synonym\t{a}\t{b}")
        for a, b in self.antonym.items():
            if (b, a) not in done:
                done.add((a, b))
                lines.append(f"antonym\t{a}\t{b}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Lexicon":
        lex = cls()
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{n}: expected 3 tab-separated fields")
            rel, a, b = parts
            if rel == "class":
                lex.add(a, b)
            elif rel == "synonym":
                lex.add_synonyms(a, b)
            elif rel == "antonym":
                lex.add_antonyms(a, b)
            else:
                raise DataFormatError(f"{path}:{n}: unknown relation {rel!r}")
        return lex


def _register(lex: Lexicon, groups, cls: str) -> None:
    for group in groups:
        for t in group:
            lex.add(t, cls)
        for a, b in itertools.combinations(group, 2):
            lex.add_synonyms(a, b)


def default_lexicon() -> Lexicon:
    lex = Lexicon()
    for pos, neg in _ADJ_PAIRS:
        _register(lex, [pos, neg], "adj")
        for a, b in zip(pos, neg):
            lex.add_antonyms(a, b)
    _register(lex, _NOUNS, "noun")
    _register(lex, _PLURALS, "plural")
    _register(lex, _COPULAS, "verb")
    _register(lex, _INTRANS, "verb")
    _register(lex, _TRANS, "verb")
    for t in _NUMBERS:
        lex.add(t, "number")
    for t in _ADVERBS:
        lex.add(t, "adverb")
    for t in _PUNCT:
        lex.add(t, "punct")
    for t in _FUNCTION:
        lex.add(t, "function")
    return lex


# -- vocabulary -------------------------------------------------------------

class Vocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise DataFormatError("vocabulary has duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str], strict: bool = True) -> list[int]:
        out = []
        for t in tokens:
            if t in self.index:
                out.append(self.index[t])
            elif strict:
                raise KeyError(f"token {t!r} is not in the vocabulary")
            else:
                out.append(self.index[UNK])
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(tokens[:4]) != RESERVED:
            raise DataFormatError(f"{path}: first four lines must be {' '.join(RESERVED)}")
        return cls(tokens)


def default_vocab(lexicon: Optional[Lexicon] = None) -> Vocab:
    return Vocab(list(RESERVED) + (lexicon or default_lexicon()).tokens())


# -- templates --------------------------------------------------------------

# Slot codes: N noun, P plural, C copula, V intransitive verb, T transitive
# verb, A adjective, K number. A trailing digit distinguishes repeated slots.
ADJ_TEMPLATES = [
    "the N C A",
    "this N C very A",
    "my N C A today",
    "i think the N C A",
    "the N in the N2 C A",
    "we know that the N C A",
    "her N C so A",
    "the A N V here",
]
NUM_TEMPLATES = [
    "how many K P have the sum of K2",
    "i T K P today",
    "there are K P in the N",
    "we T K P",
    "they T K P in the N",
    "my N has K P",
]


def _slot_options(lex: Lexicon) -> dict[str, list[str]]:
    verbs_c = [t for g in _COPULAS for t in g]
    verbs_v = [t for g in _INTRANS for t in g]
    verbs_t = [t for g in _TRANS for t in g]
    return {
        "N": lex.of_class("noun"), "P": lex.of_class("plural"), "A": lex.of_class("adj"),
        "K": lex.of_class("number"), "C": verbs_c, "V": verbs_v, "T": verbs_t,
    }


def _slot_kind(word: str) -> Optional[str]:
    return word[0] if word[0] in "NPCVTAK" and (len(word) == 1 or word[1:].isdigit()) else None


def _fill(template: str, opts, rng: Xoshiro256) -> tuple[list[str], dict[str, int]]:
    words, slots = [], {}
    for w in template.split():
        kind = _slot_kind(w)
        if kind is None:
            words.append(w)
        else:
            slots[w] = len(words)
            words.append(rng.choice(opts[kind]))
    return words, slots


def _swap_synonym(tokens: list[str], positions: Sequence[int], lex: Lexicon, rng) -> None:
    cands = [i for i in positions if lex.synonyms.get(tokens[i])]
    if cands:
        i = rng.choice(cands)
        tokens[i] = rng.choice(lex.synonyms[tokens[i]])


def _make_pair(task: str, label: int, lex: Lexicon, opts, rng: Xoshiro256):
    templates = NUM_TEMPLATES if task == "number_swap" else ADJ_TEMPLATES
    if task == "paraphrase" and rng.below(2):
        templates = NUM_TEMPLATES
    s1, slots = _fill(rng.choice(templates), opts, rng)
    s2 = list(s1)
    content = [i for w, i in slots.items() if w[0] in "NPCVTA"]
    if task == "antonym_swap":
        pos = slots["A"]
        if label == 1:
            # copy or benign synonym on the adjective or elsewhere
            _swap_synonym(s2, content if rng.below(2) else [pos], lex, rng)
        else:
            s2[pos] = rng.choice(lex.synset(lex.antonym[s1[pos]]))
    elif task == "number_swap":
        nums = [i for w, i in slots.items() if w[0] == "K"]
        if label == 1:
            if rng.below(2):
                _swap_synonym(s2, content, lex, rng)
        else:
            pos = rng.choice(nums)
            s2[pos] = rng.choice([k for k in opts["K"] if k != s1[pos]])
    elif task == "paraphrase":
        if label == 1:
            _swap_synonym(s2, content, lex, rng)
            if rng.below(2):
                _swap_synonym(s2, content, lex, rng)
        else:
            nouns = [i for w, i in slots.items() if w[0] in "NP"]
            pos = rng.choice(nouns)
            kind = "N" if lex.word_class[s1[pos]] == "noun" else "P"
            banned = set(lex.synset(s1[pos]))
            s2[pos] = rng.choice([t for t in opts[kind] if t not in banned])
    else:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    return SentencePairExample(s1, s2, label)


def template_capacity(task: str, lexicon: Optional[Lexicon] = None) -> int:
    """Upper bound on distinct examples per label for ``task``."""
    lex = lexicon or default_lexicon()
    opts = _slot_options(lex)
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    templates = NUM_TEMPLATES if task == "number_swap" else ADJ_TEMPLATES
    if task == "paraphrase":
        templates = ADJ_TEMPLATES + NUM_TEMPLATES
    total = 0
    for tpl in templates:
        kinds = [k for k in map(_slot_kind, tpl.split()) if k]
        fills = math.prod(len(opts[k]) for k in kinds)
        total += fills * 2
    return total


def generate_dataset(task: str, n: int, seed: int, lexicon: Optional[Lexicon] = None,
                     max_attempts_factor: int = 50) -> list[SentencePairExample]:
    """``n`` distinct, label-balanced examples; a pure function of (task, n, seed)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    lex = lexicon or default_lexicon()
    if n > 2 * template_capacity(task, lex):
        raise CapacityError(f"task {task!r} cannot produce {n} distinct examples")
    opts = _slot_options(lex)
    rng = Xoshiro256(seed)
    seen: set[tuple] = set()
    out: list[SentencePairExample] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > max_attempts_factor * n:
            raise CapacityError(f"task {task!r}: only {len(out)} distinct examples of {n} found")
        ex = _make_pair(task, 1 - len(out) % 2, lex, opts, rng)
        key = (ex.s1, ex.s2)
        if key in seen:
            continue
        seen.add(key)
        out.append(ex)
    rng.shuffle(out)
    return out


def split_dataset(examples: Sequence[SentencePairExample], fractions=(0.8, 0.1, 0.1)):
    n = len(examples)
    n_train = int(round(fractions[0] * n))
    n_dev = int(round(fractions[1] * n))
    return (list(examples[:n_train]), list(examples[n_train:n_train + n_dev]),
            list(examples[n_train + n_dev:]))


# -- perturbations ----------------------------------------------------------

_LABEL_RULES = {
    "SwapAnt": "flip",
    "NumWord": "flip",
    "AddPunc": "preserve",
    "SwapSyn": "preserve",
    "InsertAdv": "preserve",
}


@dataclass(frozen=True)
class PerturbationSpec:
    """A named deterministic transformation of the second sentence.

    ``params`` keys: ``count`` (AddPunc, default 1), ``to`` (NumWord: force the
    replacement number), ``max_tokens`` (joint length limit, default 21).
    """
    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.name!r}; expected one of {PERTURBATIONS}")
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(sorted(self.params.items())))

    @property
    def label_rule(self) -> str:
        return _LABEL_RULES[self.name]

    def param(self, key, default=None):
        return dict(self.params).get(key, default)


def apply_perturbation(spec: PerturbationSpec, ex: SentencePairExample, seed: int,
                       lexicon: Optional[Lexicon] = None) -> SentencePairExample:
    """Transform ``ex.s2``; raises ``NotApplicable`` when the perturbation cannot apply.

    Label-flipping specs (SwapAnt, NumWord) only apply to matching pairs, since
    a second edit on a non-matching pair could undo the first.
    """
    lex = lexicon or default_lexicon()
    rng = Xoshiro256(seed)
    s2 = list(ex.s2)
    label = ex.label
    name = spec.name
    if name in ("SwapAnt", "NumWord") and ex.label != 1:
        raise NotApplicable(f"{name} needs a matching pair")
    if name == "SwapAnt":
        cands = [i for i, t in enumerate(s2) if t in lex.antonym]
        if not cands:
            raise NotApplicable("no token with an antonym in s2")
        i = rng.choice(cands)
        s2[i] = lex.antonym[s2[i]]
        label = 0
    elif name == "NumWord":
        cands = [i for i, t in enumerate(s2) if lex.word_class.get(t) == "number"]
        if not cands:
            raise NotApplicable("no number token in s2")
        i = rng.choice(cands)
        forced = spec.param("to")
        if forced is not None:
            if forced == s2[i] or lex.word_class.get(forced) != "number":
                raise NotApplicable(f"cannot replace {s2[i]!r} by {forced!r}")
            s2[i] = forced
        else:
            s2[i] = rng.choice([k for k in lex.of_class("number") if k != s2[i]])
        label = 0
    elif name == "AddPunc":
        marks = lex.of_class("punct")
        for _ in range(int(spec.param("count", 1))):
            s2.insert(rng.below(len(s2) + 1), rng.choice(marks))
    elif name == "SwapSyn":
        cands = [i for i, t in enumerate(s2) if lex.synonyms.get(t)]
        if not cands:
            raise NotApplicable("no token with a synonym in s2")
        i = rng.choice(cands)
        s2[i] = rng.choice(lex.synonyms[s2[i]])
    elif name == "InsertAdv":
        cands = [i for i, t in enumerate(s2) if lex.word_class.get(t) == "verb"]
        if not cands:
            raise NotApplicable("no verb in s2")
        s2.insert(rng.choice(cands), rng.choice(lex.of_class("adverb")))
    if len(ex.s1) + len(s2) > int(spec.param("max_tokens", MAX_PAIR_TOKENS)):
        raise NotApplicable("perturbed pair exceeds the length limit")
    return SentencePairExample(ex.s1, tuple(s2), label)


def perturb_dataset(spec: PerturbationSpec, examples: Sequence[SentencePairExample], seed: int,
                    lexicon: Optional[Lexicon] = None):
    """Apply ``spec`` to each example (seed + index); returns (perturbed, n_skipped)."""
    lex = lexicon or default_lexicon()
    out, skipped = [], 0
    for k, ex in enumerate(examples):
        try:
            out.append(apply_perturbation(spec, ex, seed + k, lex))
        except NotApplicable:
            skipped += 1
    return out, skipped


# -- TSV --------------------------------------------------------------------

def write_tsv(path, examples: Iterable[SentencePairExample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(f"{' '.join(ex.s1)}\t{' '.join(ex.s2)}\t{ex.label}\n")


def parse_tsv_line(line: str, lineno: int = 1, source: str = "<tsv>") -> SentencePairExample:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise DataFormatError(f"{source}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
    s1, s2, label = parts
    if label.strip() not in ("0", "1"):
        raise DataFormatError(f"{source}:{lineno}: label must be 0 or 1, got {label!r}")
    return SentencePairExample(tuple(s1.split()), tuple(s2.split()), int(label))


def read_tsv(path) -> list[SentencePairExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_tsv_line(line, n, str(path)))
    return out
