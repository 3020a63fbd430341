import numpy as np
import pytest

from ouou.tree import PhyloTree, parse_newick


def random_ultrametric_newick(rng: np.random.Generator, n_tips: int, depth: float = 1.0) -> str:
    """Random bifurcating ultrametric tree with the given depth.

    Built top-down: each internal node sits at a height drawn between
    20% and 80% of its parent's height, so all branch lengths are
    positive and every tip lands exactly at height 0.
    """
    labels = iter(f"t{i}" for i in range(n_tips))

    def build(count: int, parent_height: float) -> str:
        if count == 1:
            return f"{next(labels)}:{parent_height!r}"
        height = parent_height * float(rng.uniform(0.2, 0.8))
        left = 1 + int(rng.integers(0, count - 1))
        return (
            f"({build(left, height)},{build(count - left, height)})"
            f":{parent_height - height!r}"
        )

    if n_tips == 1:
        return f"{next(labels)}:0;"
    left = 1 + int(rng.integers(0, n_tips - 1))
    return f"({build(left, depth)},{build(n_tips - left, depth)});"


def balanced_newick(levels: int, depth: float = 1.0) -> str:
    """Perfectly balanced tree with 2**levels tips, every branch depth/levels."""
    branch = depth / levels
    counter = iter(range(2**levels))

    def build(level: int) -> str:
        if level == levels:
            return f"s{next(counter)}:{branch!r}"
        return f"({build(level + 1)},{build(level + 1)}):{branch!r}"

    return f"({build(1)},{build(1)});"


@pytest.fixture
def three_tip_tree() -> PhyloTree:
    return parse_newick("((A:1,B:1):1,C:2);")


@pytest.fixture
def five_tip_tree() -> PhyloTree:
    return parse_newick("((A:0.4,B:0.4):0.3,(C:0.25,(D:0.1,E:0.1):0.15):0.45);")
