"""Request Processing Unit: full text in, SemanticQuery out.

Analysis is simple and deterministic: a fixed tokenizer, a
stopword filter, lexicon-overlap domain classification and two phrase rules
("in X", "with X") for pattern synthesis.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from pathlib import Path

from .errors import EmptyRequest, IoFailure, MalformedLine
from .logs import get_logger
from .models import ITEM_VAR, SemanticQuery, Term, TriplePattern, UserRequest
from .utils import tokenize

logger = get_logger(__name__)

GENERAL_DOMAIN = "general"

LOCATED_IN = "located-in"
HAS_FEATURE = "has-feature"
RELATES_TO = "relates-to"

# Trigger token -> predicate of the pattern it produces.
PHRASE_RULES = {"in": LOCATED_IN, "with": HAS_FEATURE}

DEFAULT_STOPWORDS = frozenset("""
a about above after again all also am an and any are as at be because been before being
below between both but by can could did do does doing down during each few find for from
further get give had has have having he her here hers him his how i if in into is it its
just like list look looking me more most my need near no nor not now of off on once only
or other our out over own please same search see she should show so some such than that
the their them then there these they this those through to too under until up very want
was we were what when where which while who whom why will with would you your
""".split())

DEFAULT_LEXICON: dict[str, frozenset[str]] = {
    "travel": frozenset({
        "hotel", "hotels", "flight", "flights", "hostel", "room", "rooms", "booking", "trip",
        "vienna", "paris", "london", "berlin", "rome", "airport", "train", "wifi", "pool",
        "parking", "breakfast", "spa",
    }),
    "food": frozenset({
        "restaurant", "restaurants", "pizza", "pasta", "sushi", "cafe", "coffee", "vegan",
        "vegetarian", "dinner", "lunch", "menu", "bakery", "wine",
    }),
    "health": frozenset({
        "doctor", "clinic", "hospital", "pharmacy", "dentist", "therapy", "vaccine", "symptom",
    }),
    "tech": frozenset({
        "laptop", "phone", "software", "python", "linux", "server", "database", "network",
    }),
    "finance": frozenset({
        "bank", "loan", "mortgage", "stock", "stocks", "fund", "insurance", "tax", "credit",
    }),
}


# ---------------------------------------------------------------------------
# Resource files
# ---------------------------------------------------------------------------

def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise IoFailure(f"Cannot read {path}: {e}") from e


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One lowercase token per line; "#" comment lines and blanks ignored."""
    words = set()
    for line in _read_lines(path):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words.add(line.lower())
    return frozenset(words)


def load_lexicon(path: str | Path) -> dict[str, frozenset[str]]:
    """Lines of `domain: term1, term2, ...`. A domain may span several lines."""
    lexicon: dict[str, set[str]] = {}
    for line_no, line in enumerate(_read_lines(path), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        domain, sep, rest = line.partition(":")
        domain = domain.strip().lower()
        if not sep or not domain:
            raise MalformedLine(str(path), line_no, "expected `domain: term1, term2, ...`")
        terms = {t.strip().lower() for t in rest.split(",") if t.strip()}
        lexicon.setdefault(domain, set()).update(terms)
    if not lexicon:
        raise MalformedLine(str(path), 0, "lexicon defines no domains")
    return {d: frozenset(t) for d, t in lexicon.items()}


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

def analyze(text: str, stopwords: Iterable[str]) -> list[str]:
    """Keywords of text: tokens minus stopwords, first occurrence order, no duplicates."""
    if not text or not text.strip():
        raise EmptyRequest()
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return list(dict.fromkeys(t for t in tokenize(text) if t not in stop))


def classify_domain(
    keywords: list[str], lexicon: Mapping[str, Iterable[str]],
) -> tuple[str, float]:
    """Pick the domain whose lexicon overlaps the keywords most.

    Ties go to the lexicographically smallest domain; no overlap at all means
    ("general", 0.0).
    """
    if not lexicon:
        raise ValueError("lexicon must define at least one domain")
    kw = set(keywords)
    denom = max(1, len(kw))
    best_domain, best_score = GENERAL_DOMAIN, 0.0
    for domain in sorted(lexicon):
        score = len(kw.intersection(lexicon[domain])) / denom
        if score > best_score:
            best_domain, best_score = domain, score
    return best_domain, best_score


def synthesize_patterns(
    tokens: list[str], keywords: list[str], stopwords: Iterable[str],
) -> list[TriplePattern]:
    """Turn the raw token stream into ?item patterns, left to right.

    A trigger ("in"/"with") binds the next token that is neither a stopword nor
    another trigger. Tokens bound this way never also become relates-to.
    """
    stop = set(stopwords)
    kw = set(keywords)
    item = Term.var(ITEM_VAR)

    fired: dict[int, int] = {}
    for i, tok in enumerate(tokens):
        if tok not in PHRASE_RULES:
            continue
        for j in range(i + 1, len(tokens)):
            if tokens[j] in PHRASE_RULES:
                break
            if tokens[j] not in stop:
                fired[i] = j
                break
    consumed = set(fired.values())
    bound = {tokens[j] for j in consumed}

    patterns: list[TriplePattern] = []
    for i, tok in enumerate(tokens):
        if i in fired:
            patterns.append(TriplePattern(item, Term.lit(PHRASE_RULES[tok]), Term.lit(tokens[fired[i]])))
        elif i not in consumed and tok in kw and tok not in bound:
            patterns.append(TriplePattern(item, Term.lit(RELATES_TO), Term.lit(tok)))
    return list(dict.fromkeys(patterns))


def build_semantic_query(
    request: UserRequest,
    stopwords: Iterable[str],
    lexicon: Mapping[str, Iterable[str]],
    constraints: Iterable[tuple[str, str]] = (),
) -> SemanticQuery:
    stop = frozenset(stopwords)
    keywords = analyze(request.text, stop)
    domain, confidence = classify_domain(keywords, lexicon)
    patterns = synthesize_patterns(tokenize(request.text), keywords, stop)
    query = SemanticQuery(
        request_id=request.request_id,
        domain=domain,
        confidence=confidence,
        keywords=tuple(keywords),
        patterns=tuple(patterns),
        constraints=tuple(sorted(constraints)),
    )
    logger.debug("request %s -> %s", request.request_id, query.to_json())
    return query
