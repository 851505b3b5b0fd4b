"""Deterministic text heuristics shared by the rule-based pipeline agents.

Everything in here is a pure function of its inputs: tokenization, clause
segmentation, filler stripping, noun-phrase chunking and the small verb
lexicons that drive imperative detection. No model calls, no randomness.
"""

from __future__ import annotations

import re

# Tokens we never treat as content: articles, prepositions, conjunctions,
# pronouns and the polite filler people put in front of requests.
STOPWORDS = frozenset(
    """
    a an the of for to from in on at with by via into as and or then if there
    is are be been was were it them those these that this i we you my me our
    your so just also please kindly want wants need needs would like help can
    could will shall may might us
    """.split()
)

# Imperative heads recognized as action verbs. Exact lowercase match only;
# segmentation relies on this to tell clause boundaries from noun coordination.
IMPERATIVE_VERBS = frozenset(
    """
    review check download send summarize translate organize indicate search
    buy purchase fetch read filter compose extract upload convert list analyze
    generate create add remove write email schedule run detect classify
    prepare structure collect compile notify post share save export import
    get look find open close delete update rename copy move print scan sort
    count merge split validate verify monitor track report build make show
    """.split()
)

# Request prefixes stripped when rewriting a clause imperative-first.
FILLER_PREFIXES = (
    "i would like you to",
    "i would like to",
    "i want you to",
    "i'd like to",
    "i want to",
    "i need to",
    "i wish to",
    "we would like to",
    "we want to",
    "we need to",
    "could you please",
    "can you please",
    "would you please",
    "could you",
    "can you",
    "would you",
    "help me to",
    "help me",
    "please",
    "kindly",
    "also",
    "then",
    "and",
    "next",
    "finally",
    "first",
)

# Nouns that always refer to an earlier step's output.
RESULT_NOUNS = frozenset({"result", "results", "output", "outputs", "outcome"})

# Prepositions that rule out a direct object when they come right after the
# verb ("send via email" has no object; "search for a book" does).
OBJECT_BLOCKING_PREPS = frozenset(
    {"from", "into", "to", "on", "at", "in", "with", "via", "as", "by"}
)

# Known slot phrases canonicalized by the planner into explicit {label} form.
SLOT_PHRASES = (
    ("website url", "website URL"),
    ("the website", "website URL"),
    ("the site", "website URL"),
)

# Verb -> clarifying input slots appended by query expansion.
VERB_CLARIFIERS = {
    "translate": ("target language",),
    "send": ("recipient",),
    "email": ("recipient",),
    "summarize": ("source content",),
    "download": ("source",),
    "search": ("search terms",),
    "fetch": ("source",),
}

# Typed entity labels for verbs whose required inputs are conventional.
SEARCH_TITLED_NOUNS = frozenset({"book", "movie", "song", "article", "paper"})
SEARCH_ENGINE_NAMES = frozenset({"google", "bing", "naver", "duckduckgo", "yahoo"})
PURCHASE_VERBS = frozenset({"buy", "purchase", "order"})

_IRREGULAR_PARTICIPLES = {
    "send": "sent",
    "read": "read",
    "write": "written",
    "make": "made",
    "do": "done",
    "take": "taken",
    "get": "got",
    "buy": "bought",
    "find": "found",
    "build": "built",
    "keep": "kept",
    "sell": "sold",
}

_VERB_NOUNS = {
    "analyze": "analysis",
    "summarize": "summary",
    "translate": "translation",
    "compose": "composition",
    "classify": "classification",
}

_WORD = re.compile(r"\{[^{}]+\}|[A-Za-z0-9@#'/:._-]+")
_SENTENCE_SPLIT = re.compile(r"[.;!?]+")
_SLOT = re.compile(r"\{([^{}]+)\}")

# Connectors that may separate clauses, longest alternatives first. A split
# only happens when the next word is an imperative verb.
_CONNECTOR = re.compile(
    r",\s+and\s+then\s+|\s+and\s+then\s+|,\s+and\s+|,\s+then\s+|\s+then\s+|\s+and\s+|,\s+",
    re.IGNORECASE,
)


def tokenize(text: str) -> list[str]:
    """Split text into word tokens; a {label} slot counts as one token.

    Inner punctuation survives (URLs, emails, file names); trailing sentence
    punctuation is stripped so "Translate." yields the verb token.
    """
    out = []
    for tok in _WORD.findall(text):
        if not is_slot(tok):
            tok = tok.rstrip(".,:;!?")
        if tok:
            out.append(tok)
    return out


def is_slot(token: str) -> bool:
    return token.startswith("{") and token.endswith("}")


def slot_label(token: str) -> str:
    m = _SLOT.fullmatch(token)
    if not m:
        raise ValueError(f"not a slot token: {token!r}")
    return m.group(1)


def slot_labels(text: str) -> list[str]:
    """All {label} slots in order of appearance."""
    return _SLOT.findall(text)


def content_tokens(text: str) -> list[str]:
    """Lowercased tokens minus stopwords; slot tokens contribute their words."""
    out: list[str] = []
    for tok in tokenize(text):
        if is_slot(tok):
            out.extend(w for w in slot_label(tok).lower().split() if w not in STOPWORDS)
            continue
        low = tok.lower()
        if low not in STOPWORDS:
            out.append(low)
    return out


def singularize(word: str) -> str:
    """Naive singular form, good enough for overlap matching."""
    low = word.lower()
    if low.endswith("ies") and len(low) > 4:
        return low[:-3] + "y"
    if low.endswith("ses") or low.endswith("xes") or low.endswith("zes"):
        return low[:-2]
    if low.endswith("s") and not low.endswith("ss") and len(low) > 3:
        return low[:-1]
    return low


def past_participle(verb: str) -> str:
    low = verb.lower()
    if low in _IRREGULAR_PARTICIPLES:
        return _IRREGULAR_PARTICIPLES[low]
    if low.endswith("e"):
        return low + "d"
    if low.endswith("y") and len(low) > 2 and low[-2] not in "aeiou":
        return low[:-1] + "ied"
    return low + "ed"


def verb_noun(verb: str) -> str:
    low = verb.lower()
    return _VERB_NOUNS.get(low, low)


def looks_past_participle(word: str) -> bool:
    low = word.lower()
    return low.endswith("ed") or low in set(_IRREGULAR_PARTICIPLES.values())


def normalize_space(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def strip_fillers(clause: str) -> str:
    """Remove leading politeness/desire prefixes until the clause is bare."""
    out = normalize_space(clause)
    changed = True
    while changed and out:
        changed = False
        low = out.lower()
        for prefix in FILLER_PREFIXES:
            if low == prefix:
                return ""
            if low.startswith(prefix + " ") or low.startswith(prefix + ","):
                out = out[len(prefix) :].lstrip(" ,")
                changed = True
                break
    return out


def capitalize_first(text: str) -> str:
    return text[:1].upper() + text[1:] if text else text


def _split_sentence(sentence: str) -> list[str]:
    """Split one sentence at connectors followed by an imperative verb."""
    parts: list[str] = []
    start = 0
    for m in _CONNECTOR.finditer(sentence):
        tail = sentence[m.end() :]
        next_word = _WORD.search(tail)
        if not next_word or next_word.group().lower() not in IMPERATIVE_VERBS:
            continue
        piece = sentence[start : m.start()].strip()
        if piece:
            parts.append(piece)
        start = m.end()
    last = sentence[start:].strip()
    if last:
        parts.append(last)
    return parts


def segment_clauses(text: str) -> list[str]:
    """Break a request into clauses on sentence enders and verb-led connectors."""
    clauses: list[str] = []
    for sentence in _SENTENCE_SPLIT.split(text):
        sentence = sentence.strip()
        if sentence:
            clauses.extend(_split_sentence(sentence))
    return clauses


def first_verb(text: str) -> tuple[str, int] | None:
    """First imperative-lexicon verb and its token position, if any."""
    for i, tok in enumerate(tokenize(text)):
        if not is_slot(tok) and tok.lower() in IMPERATIVE_VERBS:
            return tok, i
    return None


def object_phrase(text: str) -> list[str]:
    """Tokens of the direct-object phrase that follows the leading verb.

    The phrase is the first run of content tokens after the verb, extended
    across "of the X" chains ("the results of the image review").
    """
    found = first_verb(text)
    if not found:
        return []
    tokens = tokenize(text)
    i = found[1] + 1
    # Skip leading particles/articles ("for", "a", "the"...).
    while i < len(tokens) and not is_slot(tokens[i]) and tokens[i].lower() in STOPWORDS:
        if tokens[i].lower() == "if" or tokens[i].lower() in OBJECT_BLOCKING_PREPS:
            return []
        i += 1
    phrase: list[str] = []
    while i < len(tokens):
        tok = tokens[i]
        if is_slot(tok):
            break
        low = tok.lower()
        if low in STOPWORDS:
            # Extend across an "of ..." chain, otherwise stop.
            if low == "of" and phrase:
                phrase.append(tok)
                i += 1
                while i < len(tokens) and tokens[i].lower() in ("the", "a", "an"):
                    phrase.append(tokens[i])
                    i += 1
                continue
            break
        phrase.append(tok)
        i += 1
    while phrase and phrase[-1].lower() in ("of", "the", "a", "an"):
        phrase.pop()
    return phrase


def object_head(text: str) -> str | None:
    """Head noun of the direct object: last token before any "of" chain."""
    phrase = object_phrase(text)
    if not phrase:
        return None
    head = phrase[0]
    for tok in phrase:
        if tok.lower() == "of":
            break
        head = tok
    return head.lower()


def overlap_tokens(text: str) -> set[str]:
    """Singularized content tokens used for cross-step overlap matching."""
    return {singularize(t) for t in content_tokens(text)}


def canonicalize_slots(text: str) -> str:
    """Rewrite known data-source phrases into explicit {label} slots."""
    out = text
    for phrase, label in SLOT_PHRASES:
        pattern = re.compile(
            r"(?<!\{)" + r"\s+".join(re.escape(w) for w in phrase.split()) + r"(?![^{]*\})",
            re.IGNORECASE,
        )
        out = pattern.sub("{" + label + "}", out)
    # Collapse accidental nesting from overlapping phrases.
    out = re.sub(r"\{\{([^{}]+)\}\}", r"{\1}", out)
    return normalize_space(out)
