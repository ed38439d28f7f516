"""Semantic trees for instructions: grammar, parser, serializer, metrics.

The wire format is an S-expression grammar, normative for prompts and
validation:

    tree := "(" label ":" tag tree* ")"        tag in {N, V, C}

N and V mark content nodes (nouns and verbs); C marks connectives. Labels
are stored verbatim; a label containing whitespace, parentheses, a colon,
or a double quote is serialized double-quoted with backslash escapes.

All traversals are iterative: extraction of long instructions produces
chain trees far deeper than the interpreter recursion limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

TAGS = ("N", "V", "C")
CONTENT_TAGS = ("N", "V")

_BARE_TERMINATORS = '():"'


class TreeParseError(ValueError):
    """Input does not contain a well-formed tree expression."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)


class NoTreeError(TreeParseError):
    """No parenthesized expression found at all."""


class TagError(TreeParseError):
    """Node tag is not one of N, V, C."""


class ImbalanceError(TreeParseError):
    """Parentheses are unbalanced."""


@dataclass
class TreeNode:
    """One labeled, class-tagged node; a tree is its root node."""

    label: str
    tag: str
    children: list[TreeNode] = field(default_factory=list)

    def __post_init__(self):
        if not self.label:
            raise ValueError("node label must be non-empty")
        if self.tag not in TAGS:
            raise ValueError(f"node tag must be one of {TAGS}, got {self.tag!r}")

    def __eq__(self, other: object) -> bool:
        # Iterative: chain trees overflow the generated recursive __eq__.
        if not isinstance(other, TreeNode):
            return NotImplemented
        stack = [(self, other)]
        while stack:
            a, b = stack.pop()
            if a.label != b.label or a.tag != b.tag:
                return False
            if len(a.children) != len(b.children):
                return False
            stack.extend(zip(a.children, b.children))
        return True


SemanticTree = TreeNode


@dataclass(frozen=True)
class TreeMetrics:
    total_nodes: int
    content_nodes: int
    depth: int
    width: int


def preorder(tree: TreeNode) -> list[TreeNode]:
    """Nodes in pre-order (parent before children, children left to right)."""
    out = []
    stack = [tree]
    while stack:
        node = stack.pop()
        out.append(node)
        stack.extend(reversed(node.children))
    return out


def copy_tree(tree: TreeNode) -> TreeNode:
    new_root = TreeNode(tree.label, tree.tag)
    stack = [(tree, new_root)]
    while stack:
        src, dst = stack.pop()
        for child in src.children:
            new_child = TreeNode(child.label, child.tag)
            dst.children.append(new_child)
            stack.append((child, new_child))
    return new_root


def _parse_label(text: str, pos: int) -> tuple[str, int]:
    if pos < len(text) and text[pos] == '"':
        chars = []
        i = pos + 1
        while i < len(text):
            ch = text[i]
            if ch == "\\":
                if i + 1 >= len(text):
                    raise ImbalanceError("unterminated escape in quoted label", i)
                chars.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                return "".join(chars), i + 1
            chars.append(ch)
            i += 1
        raise ImbalanceError("unterminated quoted label", pos)
    i = pos
    while i < len(text) and not text[i].isspace() and text[i] not in _BARE_TERMINATORS:
        i += 1
    return text[pos:i], i


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def _parse_at(text: str, start: int) -> tuple[TreeNode, int]:
    """Parse one tree expression whose '(' sits at `start`.

    Returns (root, end position just past the closing paren). Raises a
    TreeParseError subclass on any grammar violation.
    """
    root: TreeNode | None = None
    stack: list[TreeNode] = []
    pos = start
    while True:
        pos = _skip_ws(text, pos)
        if pos >= len(text):
            raise ImbalanceError("unbalanced expression, missing ')'", len(text))
        ch = text[pos]
        if ch == "(":
            pos = _skip_ws(text, pos + 1)
            label, pos = _parse_label(text, pos)
            if not label:
                raise TreeParseError("expected node label", pos)
            if pos >= len(text) or text[pos] != ":":
                raise TreeParseError("expected ':' after label", pos)
            pos += 1
            if pos >= len(text) or text[pos] not in TAGS:
                raise TagError(
                    f"expected tag N, V, or C, got {text[pos:pos + 1]!r}", pos
                )
            tag = text[pos]
            pos += 1
            if pos < len(text) and not text[pos].isspace() and text[pos] not in "()":
                raise TagError(f"malformed tag {text[pos - 1:pos + 1]!r}", pos)
            node = TreeNode(label, tag)
            if stack:
                stack[-1].children.append(node)
            else:
                root = node
            stack.append(node)
        elif ch == ")":
            stack.pop()
            pos += 1
            if not stack:
                assert root is not None
                return root, pos
        else:
            raise TreeParseError(f"expected '(' or ')', got {ch!r}", pos)


def parse_tree(text: str) -> TreeNode:
    """Parse the first balanced tree expression in `text`.

    Surrounding prose is ignored: candidate '(' positions are tried left to
    right and the first one that parses as a complete tree wins. A failed
    candidate is resumed only past its failure position, so a truncated
    tree reports its imbalance instead of yielding an inner subtree. If no
    candidate parses, the diagnostic from the leftmost one is raised.
    """
    first_error: TreeParseError | None = None
    start = text.find("(")
    if start == -1:
        raise NoTreeError("no parenthesized expression in input")
    while start != -1:
        try:
            node, _ = _parse_at(text, start)
            return node
        except TreeParseError as err:
            if first_error is None:
                first_error = err
            resume = max(start + 1, err.position or 0)
        start = text.find("(", resume)
    assert first_error is not None
    raise first_error


def _quote_label(label: str) -> str:
    needs_quoting = any(ch.isspace() or ch in _BARE_TERMINATORS for ch in label)
    if not needs_quoting:
        return label
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_tree(tree: TreeNode) -> str:
    """Canonical form: single spaces between siblings, minimal quoting.

    parse_tree(serialize_tree(t)) == t for every valid tree.
    """
    parts: list[str] = []
    # Work items: a node to open, or a literal token to emit.
    stack: list[TreeNode | str] = [tree]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            parts.append(item)
            continue
        parts.append(f"({_quote_label(item.label)}:{item.tag}")
        stack.append(")")
        for child in reversed(item.children):
            stack.append(child)
            stack.append(" ")
    return "".join(parts)


def metrics(tree: TreeNode) -> TreeMetrics:
    """Node counts plus depth (nodes on the longest root-to-leaf path) and
    width (max node count at any depth level). A single node has depth 1
    and width 1."""
    total = 0
    content = 0
    level_counts: dict[int, int] = {}
    stack: list[tuple[TreeNode, int]] = [(tree, 1)]
    while stack:
        node, level = stack.pop()
        total += 1
        if node.tag in CONTENT_TAGS:
            content += 1
        level_counts[level] = level_counts.get(level, 0) + 1
        for child in node.children:
            stack.append((child, level + 1))
    return TreeMetrics(
        total_nodes=total,
        content_nodes=content,
        depth=max(level_counts),
        width=max(level_counts.values()),
    )


def content_delta(old: TreeNode, new: TreeNode) -> int:
    """Signed change in content-node (N/V) count from `old` to `new`."""
    return metrics(new).content_nodes - metrics(old).content_nodes
