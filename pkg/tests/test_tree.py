import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ouou.tree import (
    NewickError,
    NotUltrametricError,
    normalize_tip_depths,
    parse_newick,
    serialize_newick,
    validate_ultrametric,
)

from conftest import random_ultrametric_newick


class TestParse:
    def test_two_tips(self):
        tree = parse_newick("(A:1,B:1);")
        assert tree.tip_labels == ["A", "B"]
        assert tree.tip_depths.tolist() == [1.0, 1.0]
        assert tree.pair_times("A", "B").shared_time == 0.0

    def test_three_tips(self, three_tip_tree):
        assert three_tip_tree.tip_labels == ["A", "B", "C"]
        assert three_tip_tree.depth == 2.0
        assert three_tip_tree.pair_times("A", "B").shared_time == 1.0
        assert three_tip_tree.pair_times("A", "C").shared_time == 0.0

    def test_unbalanced_paren_is_error(self):
        with pytest.raises(NewickError):
            parse_newick("(A:1")

    def test_error_reports_position(self):
        with pytest.raises(NewickError) as err:
            parse_newick("(A:1,B:x);")
        assert err.value.position == 7

    def test_missing_branch_length(self):
        with pytest.raises(NewickError, match="missing branch length"):
            parse_newick("(A:1,B);")

    def test_duplicate_tip_label(self):
        with pytest.raises(ValueError, match="duplicate tip label"):
            parse_newick("(A:1,A:1);")

    def test_negative_branch_length(self):
        with pytest.raises(NewickError, match=">= 0"):
            parse_newick("(A:-1,B:1);")

    def test_quoted_label_rejected(self):
        with pytest.raises(NewickError, match="quoted"):
            parse_newick("('A':1,B:1);")

    def test_comment_rejected(self):
        with pytest.raises(NewickError, match="comment"):
            parse_newick("(A[x]:1,B:1);")

    def test_trailing_garbage(self):
        with pytest.raises(NewickError, match="trailing"):
            parse_newick("(A:1,B:1); extra")

    def test_multifurcation_accepted(self):
        tree = parse_newick("(A:1,B:1,C:1);")
        assert tree.n_tips == 3
        assert tree.pair_times("A", "C").shared_time == 0.0

    def test_whitespace_tolerated(self):
        tree = parse_newick(" ( A:1 ,\n B:2.5 ) ;\n")
        assert tree.tip_labels == ["A", "B"]

    def test_internal_label_kept(self):
        tree = parse_newick("((A:1,B:1)ab:1,C:2);")
        assert "ab" in serialize_newick(tree)


class TestSerialize:
    def test_two_tip_exact(self):
        assert serialize_newick(parse_newick("(A:1,B:1);")) == "(A:1,B:1);"

    def test_three_tip_exact(self):
        assert serialize_newick(parse_newick("((A:1,B:1):1,C:2);")) == "((A:1,B:1):1,C:2);"

    def test_single_tip_with_root_length(self):
        assert serialize_newick(parse_newick("A:0;")) == "A:0;"

    def test_round_trip_random_trees(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            text = random_ultrametric_newick(rng, int(rng.integers(2, 40)))
            tree = parse_newick(text)
            again = parse_newick(serialize_newick(tree))
            assert again.tip_labels == tree.tip_labels
            np.testing.assert_array_equal(again.shared_time_matrix, tree.shared_time_matrix)
            np.testing.assert_array_equal(again.divergence_matrix, tree.divergence_matrix)
            assert serialize_newick(again) == serialize_newick(tree)


class TestPairTimes:
    def test_self_pair(self, three_tip_tree):
        pt = three_tip_tree.pair_times("A", "A")
        assert pt.shared_time == 2.0
        assert pt.divergence_time == 0.0

    def test_divergence(self, three_tip_tree):
        assert three_tip_tree.pair_times("A", "B").divergence_time == 2.0
        assert three_tip_tree.pair_times("A", "C").divergence_time == 4.0

    def test_unknown_tip(self, three_tip_tree):
        with pytest.raises(KeyError, match="unknown tip"):
            three_tip_tree.pair_times("A", "Z")

    def test_symmetry_and_depth_identity_random(self):
        # on an ultrametric tree, t_a + d/2 = T for every pair
        rng = np.random.default_rng(11)
        for _ in range(20):
            tree = parse_newick(random_ultrametric_newick(rng, int(rng.integers(2, 60))))
            ta = tree.shared_time_matrix
            d = tree.divergence_matrix
            np.testing.assert_allclose(ta, ta.T, rtol=1e-12)
            np.testing.assert_allclose(d, d.T, rtol=1e-12)
            np.testing.assert_allclose(ta + d / 2, tree.depth, rtol=1e-12)


class TestUltrametric:
    def test_valid(self, three_tip_tree):
        assert validate_ultrametric(three_tip_tree) == 2.0

    def test_invalid_names_worst_tip(self):
        tree = parse_newick("(A:1,B:2);")
        with pytest.raises(NotUltrametricError, match=r"tip '[AB]'"):
            validate_ultrametric(tree)
        tree = parse_newick("((A:1,B:1):1,C:5);")
        with pytest.raises(NotUltrametricError, match="tip 'C'"):
            validate_ultrametric(tree)

    def test_tolerance_semantics(self):
        tree = parse_newick("(A:1,B:1.2);")
        assert validate_ultrametric(tree, rel_tol=0.5) == pytest.approx(1.1)
        with pytest.raises(NotUltrametricError):
            validate_ultrametric(tree, rel_tol=1e-3)

    def test_normalize_tip_depths(self):
        tree = normalize_tip_depths(parse_newick("(A:1,B:1.2);"))
        assert validate_ultrametric(tree, rel_tol=1e-12) == pytest.approx(1.1)

    def test_normalize_rejects_negative_pendant(self):
        with pytest.raises(ValueError, match="negative"):
            normalize_tip_depths(parse_newick("((A:0.1,B:0.1):5,C:1);"))


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=60))
def test_parser_never_crashes_unexpectedly(text):
    # arbitrary input either parses or raises a clean error, never anything else
    try:
        parse_newick(text)
    except (NewickError, ValueError):
        pass
