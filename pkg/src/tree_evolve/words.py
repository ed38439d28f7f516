"""Fixed word lists and token normalization.

These lists are frozen constants: the offline backend, the extraction
heuristic, and the judge stand-in all derive their behavior from them, so
changing a single word changes every downstream byte. Sizes are pinned by
tests (50 function words, 32 nouns, 32 verbs).
"""

from __future__ import annotations

# Connective emitted by the verbalizer for multi-child nodes. It is also a
# function word, so re-extraction drops it and node deltas stay exact.
CONNECTIVE = "involving"

FUNCTION_WORDS = frozenset({
    "a", "an", "the", "and", "or", "but", "if", "then", "else", "when",
    "while", "of", "to", "in", "on", "at", "by", "for", "with", "from",
    "as", "is", "are", "was", "were", "be", "been", "do", "does", "did",
    "have", "has", "had", "will", "would", "can", "could", "should", "may",
    "might", "must", "that", "this", "these", "those", "it", "not", "no",
    "involving", "now",
})

NOUNS = (
    "framework", "dataset", "metric", "pipeline", "strategy", "constraint",
    "outcome", "criterion", "budget", "schedule", "protocol", "scenario",
    "resource", "stakeholder", "benchmark", "hypothesis", "workflow",
    "interface", "threshold", "tradeoff", "audience", "context", "evidence",
    "roadmap", "module", "guideline", "feedback", "inventory", "milestone",
    "taxonomy", "parameter", "archive",
)

VERBS = (
    "analyze", "evaluate", "design", "implement", "compare", "optimize",
    "measure", "document", "integrate", "validate", "summarize", "classify",
    "predict", "monitor", "organize", "translate", "calculate", "review",
    "construct", "refine", "illustrate", "examine", "prioritize", "simulate",
    "verify", "annotate", "balance", "forecast", "justify", "streamline",
    "interpret", "coordinate",
)


def normalize_token(token: str) -> str:
    """Lowercase and strip non-alphanumeric characters from both ends.

    Interior punctuation (apostrophes, hyphens, decimal points) is kept so
    normalization is idempotent: normalize(normalize(t)) == normalize(t).
    """
    start = 0
    end = len(token)
    while start < end and not token[start].isalnum():
        start += 1
    while end > start and not token[end - 1].isalnum():
        end -= 1
    return token[start:end].lower()


def content_tokens(text: str) -> list[str]:
    """Normalized whitespace tokens minus the function-word stoplist."""
    out = []
    for raw in text.split():
        tok = normalize_token(raw)
        if tok and tok not in FUNCTION_WORDS:
            out.append(tok)
    return out
