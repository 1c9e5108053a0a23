import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiertask.core import (
    ActionPrimitive,
    CompoundAction,
    DomainError,
    HierarchyGraph,
    Outcome,
    OutcomeSpace,
    PRIMITIVE_NODE,
    Procedure,
    concat,
)


def prim(*vals):
    return ActionPrimitive(np.array(vals, dtype=float))


class TestActionPrimitive:
    def test_holds_params(self):
        p = prim(0.5, -0.5, 0.0)
        np.testing.assert_array_equal(p.params, [0.5, -0.5, 0.0])
        assert p.dim == 3

    def test_rejects_out_of_range(self):
        with pytest.raises(DomainError):
            prim(1.5, 0.0)

    def test_rejects_empty(self):
        with pytest.raises(DomainError):
            ActionPrimitive(np.array([]))


class TestConcat:
    def test_two_singletons(self):
        a = CompoundAction((prim(0.1, 0.2),))
        b = CompoundAction((prim(0.3, 0.4),))
        ab = concat([a, b])
        assert len(ab) == 2
        np.testing.assert_array_equal(ab.primitives[1].params, [0.3, 0.4])

    def test_identity_on_single(self):
        a = CompoundAction((prim(0.1, 0.2), prim(0.0, 0.0)))
        assert concat([a]).primitives == a.primitives

    def test_rejects_empty_list(self):
        with pytest.raises(DomainError):
            concat([])

    def test_compound_needs_a_primitive(self):
        with pytest.raises(DomainError):
            CompoundAction(())

    def test_mixed_dims_rejected(self):
        with pytest.raises(DomainError):
            CompoundAction((prim(0.1), prim(0.1, 0.2)))

    @given(
        st.lists(
            st.lists(
                st.lists(
                    st.floats(min_value=-1.0, max_value=1.0),
                    min_size=2,
                    max_size=2,
                ),
                min_size=1,
                max_size=3,
            ),
            min_size=2,
            max_size=4,
        )
    )
    @settings(max_examples=50)
    def test_associative_and_length_preserving(self, groups):
        actions = [
            CompoundAction(tuple(prim(*p) for p in grp)) for grp in groups
        ]
        left = concat([concat(actions[:2])] + actions[2:])
        right = concat(actions)
        assert len(right) == sum(len(a) for a in actions)
        assert [tuple(p.params) for p in left] == [tuple(p.params) for p in right]


class TestOutcomeSpace:
    def test_diameter(self):
        sp = OutcomeSpace("flat", np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        assert sp.diameter == pytest.approx(np.sqrt(8.0))

    def test_clip_flags(self):
        sp = OutcomeSpace("flat", np.array([0.0]), np.array([1.0]))
        v, was_clipped = sp.clip(np.array([1.4]))
        assert was_clipped and v[0] == 1.0
        v, was_clipped = sp.clip(np.array([0.4]))
        assert not was_clipped

    def test_rejects_degenerate(self):
        with pytest.raises(DomainError):
            OutcomeSpace("bad", np.array([0.0, 0.0]), np.array([1.0, 0.0]))


class TestProcedure:
    def test_two_components(self):
        p = Procedure(
            (
                Outcome("pen", np.array([0.1, 0.2])),
                Outcome("pen", np.array([0.3, 0.1])),
            )
        )
        assert p.spaces == ("pen", "pen")

    def test_rejects_single_component(self):
        with pytest.raises(DomainError):
            Procedure((Outcome("pen", np.array([0.1, 0.2])),))

    def test_goal_space_guard(self):
        p = Procedure(
            (
                Outcome("pen", np.array([0.1, 0.2])),
                Outcome("effector", np.array([0.3, 0.1])),
            )
        )
        with pytest.raises(DomainError):
            p.check_goal_space("pen")
        p.check_goal_space("drawing")  # fine


class TestHierarchyGraph:
    def spaces(self):
        return ["effector", "pen", "drawing"]

    def test_dense_init_is_pruned_and_acyclic(self):
        h = HierarchyGraph(prune_threshold=0.05)
        h.densely_connect(self.spaces())
        # every ordered pair of the two other spaces, with repetition
        assert len(h.decompositions("pen")) == 4
        assert h.best_decomposition("pen") is None
        h.check_acyclic()

    def test_update_moves_weight_toward_competence(self):
        h = HierarchyGraph()
        h.densely_connect(self.spaces())
        w = h.update_weight("drawing", ("pen", "pen"), competence=-0.2, rate=0.1)
        assert w == pytest.approx(0.05 + 0.1 * (0.8 - 0.05))
        assert h.best_decomposition("drawing") == ("pen", "pen")

    def test_best_decomposition_tie_breaks_lexicographically(self):
        h = HierarchyGraph()
        h.add_edge("drawing", ("pen", "pen"), 0.4)
        h.add_edge("drawing", ("effector", "pen"), 0.4)
        assert h.best_decomposition("drawing") == ("effector", "pen")

    def test_all_pruned_returns_none(self):
        h = HierarchyGraph()
        h.add_edge("drawing", ("pen", "pen"), 0.05)
        assert h.best_decomposition("drawing") is None

    def test_cycle_capped_at_threshold(self):
        h = HierarchyGraph()
        h.add_edge("pen", ("effector", "effector"), 0.05)
        h.add_edge("effector", ("pen", "pen"), 0.05)
        h.update_weight("pen", ("effector", "effector"), competence=0.0, rate=0.5)
        assert h.is_active("pen", ("effector", "effector"))
        # activating the reverse edge would close a cycle -> capped
        h.update_weight("effector", ("pen", "pen"), competence=0.0, rate=0.5)
        assert not h.is_active("effector", ("pen", "pen"))
        assert h.weight("effector", ("pen", "pen")) == pytest.approx(0.05)
        h.check_acyclic()

    def test_self_edge_rejected(self):
        h = HierarchyGraph()
        with pytest.raises(DomainError):
            h.add_edge("pen", ("pen", "effector"), 0.1)

    @given(
        st.lists(
            st.floats(min_value=-1.0, max_value=0.0), min_size=1, max_size=40
        )
    )
    @settings(max_examples=50)
    def test_weights_stay_in_unit_interval(self, comps):
        h = HierarchyGraph()
        h.densely_connect(["a", "b", "c"])
        for c in comps:
            w = h.update_weight("a", ("b", "c"), competence=c, rate=0.1)
            assert 0.0 <= w <= 1.0

    def test_dot_lists_all_nodes(self):
        h = HierarchyGraph()
        h.densely_connect(self.spaces())
        dot = h.to_dot()
        for node in [PRIMITIVE_NODE] + self.spaces():
            assert f'"{node}"' in dot
