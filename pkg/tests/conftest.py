"""Shared fixtures: deterministic tree generators, metric oracles, and
synthetic instruction sets."""

from __future__ import annotations

import itertools

import pytest

from tree_evolve.dataset_io import InstructionSample, SampleSet
from tree_evolve.prng import SplitMix64
from tree_evolve.semantic_tree import TAGS, TreeNode

# Labels chosen to stress quoting: whitespace, quotes, parens, colons,
# backslashes, and non-ASCII all appear.
LABEL_POOL = (
    "a", "b", "curb", "two words", 'quo"te', "back\\slash", "(paren)",
    "colon:label", "ünïcode", "dot.", "x  y", "tab\tchar",
)


def random_tree(size: int, seed: int) -> TreeNode:
    """Seeded random tree: each new node attaches as the last child of a
    uniformly chosen existing node, which reaches every ordered shape."""
    rng = SplitMix64(seed)
    root = TreeNode(LABEL_POOL[rng.next_below(len(LABEL_POOL))], TAGS[rng.next_below(3)])
    nodes = [root]
    for _ in range(size - 1):
        parent = nodes[rng.next_below(len(nodes))]
        child = TreeNode(LABEL_POOL[rng.next_below(len(LABEL_POOL))], TAGS[rng.next_below(3)])
        parent.children.append(child)
        nodes.append(child)
    return root


def compositions(n: int):
    """Ordered positive-integer compositions of n."""
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in compositions(n - first):
            yield (first,) + rest


def tree_shapes(n: int):
    """All ordered tree shapes with n nodes, as nested tuples of child shapes."""
    if n == 1:
        yield ()
        return
    for parts in compositions(n - 1):
        for combo in itertools.product(*(list(tree_shapes(p)) for p in parts)):
            yield combo


def build_from_shape(shape, tags, labels) -> TreeNode:
    """Materialize a shape with tags/labels assigned in pre-order."""
    counter = itertools.count()

    def build(sub) -> TreeNode:
        index = next(counter)
        node = TreeNode(labels[index % len(labels)], tags[index])
        for child_shape in sub:
            node.children.append(build(child_shape))
        return node

    return build(shape)


def level_order_metrics(root: TreeNode) -> tuple[int, int, int, int]:
    """Brute-force (total, content, depth, width) by level-order traversal."""
    total = content = depth = width = 0
    level = [root]
    while level:
        depth += 1
        width = max(width, len(level))
        total += len(level)
        content += sum(1 for node in level if node.tag in ("N", "V"))
        level = [child for node in level for child in node.children]
    return total, content, depth, width


def make_fixture_samples(n: int, prefix: str = "fx") -> SampleSet:
    """Deterministic synthetic instructions with plenty of content words."""
    topics = ("gardens", "engines", "recipes", "bridges", "orchestras", "glaciers")
    verbs = ("compose", "draft", "outline", "explain", "sketch", "plan")
    items = []
    for i in range(n):
        instruction = (
            f"{verbs[i % len(verbs)].capitalize()} a detailed report about "
            f"{topics[i % len(topics)]} number {i} covering goals risks and costs"
        )
        items.append(InstructionSample(
            id=f"{prefix}{i:06d}",
            instruction=instruction,
            input="",
            output=f"Report {i}: the goals risks and costs are described here.",
            source="alpaca",
        ))
    return SampleSet(items, provenance=f"fixture:{n}")


@pytest.fixture
def fixture_samples() -> SampleSet:
    return make_fixture_samples(12)
