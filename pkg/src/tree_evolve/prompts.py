"""Prompt templates and their payload codecs.

Every template embeds free-text payloads inside double quotes with
backslash escaping, so the offline backend (and tests) can recover the
exact payload from a rendered prompt. Templates are byte-stable contract
text: the rewriter template in particular is fixed verbatim, since node
deltas are only comparable when every run uses identical wording.
"""

from __future__ import annotations

import re

TREE_INSTRUCT_TEMPLATE = """\
You are an instruction rewriter. You need to rewrite a given user instruction following Procedures step by step. You MUST ONLY return the NEW instruction you rewrite.

Procedure:
step-1: Parse the old "instruction" to a TREE-1 through Semantic Parsing in the natural language processing field.
step-2: EXPAND the above NEW TREE-1 from depth or width by adding "your_added_number" meaningful NEW Nodes as nouns or verbs to form a NEW TREE-2. The new nodes should be constructed with detailed and pertinent information.
step-3: Generate a totally NEW "instruction" based on the expanded NEW TREE-2.

Old instruction: "your_instruction"

New instruction:"""

DEEPENING_TEMPLATE = """\
Your objective is to rewrite a given prompt into a more complex version to make ChatGPT and GPT4 a bit harder to handle.
You SHOULD complicate the given prompt by adding depth: more reasoning steps, tighter constraints, and more specific requirements, while keeping it on the same topic and answerable.
You MUST ONLY return the rewritten prompt.

Given prompt: "your_instruction"

Rewritten prompt:"""

EXTRACTION_TEMPLATE = """\
You are a semantic parser. Convert the instruction below into one semantic tree written as an S-expression: (label:TAG child child ...), where TAG is N for a noun, V for a verb, or C for a connective. Use lowercase single-word labels where possible. You MUST ONLY return the S-expression, on a single line.

Instruction: "your_instruction"

S-expression:"""

CONSISTENCY_TEMPLATE = """\
You are a strict evaluator. Rate how well the rewritten instruction preserves the objective of the original instruction. Reply with ONLY one decimal number between 0 and 1, where 1 means the objective is fully preserved and 0 means it is lost.

Original instruction: "original_text"
Rewritten instruction: "rewritten_text"

Score:"""

PAIRWISE_CRITERIA = {
    "pairwise_consistency": (
        "Decide which candidate instruction better preserves the objective "
        "of the context instruction."
    ),
    "pairwise_win": (
        "Decide which candidate is the better response to the context "
        "instruction."
    ),
}

PAIRWISE_TEMPLATE = """\
You are a strict evaluator. judging_criterion Reply with ONLY one word: A, B, or TIE.

Context: "context_text"
Candidate A: "candidate_a_text"
Candidate B: "candidate_b_text"

Answer:"""

RESPONDER_SYSTEM = "You are a helpful assistant."


def _render(template: str, substitutions: dict[str, str]) -> str:
    """Replace each placeholder once, positionally.

    Payloads are never rescanned, so a payload containing another
    placeholder's literal text cannot corrupt the rendering.
    """
    spans = sorted(
        (template.index(name), name) for name in substitutions
    )
    parts = []
    cursor = 0
    for start, name in spans:
        parts.append(template[cursor:start])
        parts.append(substitutions[name])
        cursor = start + len(name)
    parts.append(template[cursor:])
    return "".join(parts)


def escape_payload(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def unescape_payload(text: str) -> str:
    chars = []
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            chars.append(text[i + 1])
            i += 2
        else:
            chars.append(text[i])
            i += 1
    return "".join(chars)


def extract_quoted(text: str, marker: str) -> str | None:
    """Recover the escaped quoted payload following `marker` + '"'."""
    start = text.find(marker + '"')
    if start == -1:
        return None
    i = start + len(marker) + 1
    chars = []
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            chars.append(text[i + 1])
            i += 2
            continue
        if ch == '"':
            return "".join(chars)
        chars.append(ch)
        i += 1
    return None


def build_tree_instruct_prompt(instruction: str, n: int) -> str:
    """Rewriter prompt asking for exactly `n` added noun/verb nodes."""
    if not instruction.strip():
        raise ValueError("instruction must be non-empty")
    if n < 1:
        raise ValueError(f"added-node count must be positive, got {n}")
    return _render(TREE_INSTRUCT_TEMPLATE, {
        "your_added_number": str(n),
        "your_instruction": escape_payload(instruction),
    })


def build_deepening_prompt(instruction: str) -> str:
    """Direct rewrite-to-harder prompt, the sequence-level baseline."""
    if not instruction.strip():
        raise ValueError("instruction must be non-empty")
    return _render(DEEPENING_TEMPLATE, {
        "your_instruction": escape_payload(instruction),
    })


def build_extraction_prompt(instruction: str) -> str:
    if not instruction.strip():
        raise ValueError("instruction must be non-empty")
    return _render(EXTRACTION_TEMPLATE, {
        "your_instruction": escape_payload(instruction),
    })


def build_consistency_prompt(original: str, rewritten: str) -> str:
    return _render(CONSISTENCY_TEMPLATE, {
        "original_text": escape_payload(original),
        "rewritten_text": escape_payload(rewritten),
    })


def build_pairwise_prompt(context: str, candidate_a: str, candidate_b: str, kind: str) -> str:
    return _render(PAIRWISE_TEMPLATE, {
        "judging_criterion": PAIRWISE_CRITERIA[kind],
        "context_text": escape_payload(context),
        "candidate_a_text": escape_payload(candidate_a),
        "candidate_b_text": escape_payload(candidate_b),
    })


_ADDED_NODES_RE = re.compile(r'by adding "(\d+)" meaningful NEW Nodes')


def tree_instruct_payload(prompt: str) -> tuple[str, int] | None:
    """(instruction, n) if `prompt` is a rendered rewriter prompt."""
    if not prompt.startswith(TREE_INSTRUCT_TEMPLATE.split("\n", 1)[0]):
        return None
    match = _ADDED_NODES_RE.search(prompt)
    instruction = extract_quoted(prompt, "Old instruction: ")
    if match is None or instruction is None:
        return None
    return instruction, int(match.group(1))


def deepening_payload(prompt: str) -> str | None:
    if not prompt.startswith(DEEPENING_TEMPLATE.split("\n", 1)[0]):
        return None
    return extract_quoted(prompt, "Given prompt: ")


def extraction_payload(prompt: str) -> str | None:
    if not prompt.startswith(EXTRACTION_TEMPLATE.split("\n", 1)[0]):
        return None
    return extract_quoted(prompt, "Instruction: ")


def consistency_payload(prompt: str) -> tuple[str, str] | None:
    if not prompt.startswith(CONSISTENCY_TEMPLATE.split("\n", 1)[0]):
        return None
    original = extract_quoted(prompt, "Original instruction: ")
    rewritten = extract_quoted(prompt, "Rewritten instruction: ")
    if original is None or rewritten is None:
        return None
    return original, rewritten


def pairwise_payload(prompt: str) -> tuple[str, str, str] | None:
    if not prompt.startswith("You are a strict evaluator. Decide which candidate"):
        return None
    context = extract_quoted(prompt, "Context: ")
    candidate_a = extract_quoted(prompt, "Candidate A: ")
    candidate_b = extract_quoted(prompt, "Candidate B: ")
    if context is None or candidate_a is None or candidate_b is None:
        return None
    return context, candidate_a, candidate_b
