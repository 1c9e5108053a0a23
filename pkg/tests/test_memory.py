import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiertask.core import (
    ActionPrimitive,
    CompoundAction,
    EpisodeRecord,
    Outcome,
    OutcomeSpace,
)
from hiertask.memory import EpisodicMemory, MemoryRejection


def make_spaces():
    return {
        "effector": OutcomeSpace("effector", np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        "pen": OutcomeSpace("pen", np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
    }


def make_record(episode, value, space="effector", competence=-0.1, n_prims=1):
    prims = tuple(
        ActionPrimitive(np.array([0.1 * (i + 1), 0.0, 0.0])) for i in range(n_prims)
    )
    action = CompoundAction(prims)
    traj = np.linspace([0.0, 0.0], list(value), n_prims + 1)
    return EpisodeRecord(
        episode=episode,
        context=np.zeros(2),
        strategy="outcome-explore",
        goal=Outcome(space, np.asarray(value, dtype=float)),
        controllables=prims,
        action=action,
        reached={
            "effector": Outcome("effector", np.asarray(value, dtype=float))
            if space == "effector"
            else Outcome("effector", np.zeros(2)),
            "pen": Outcome(space, np.asarray(value, dtype=float))
            if space == "pen"
            else None,
        },
        competence=competence,
        stepwise={"effector": traj},
        step_context=np.zeros((n_prims, 2)),
    )


class TestRecording:
    def test_append_and_count(self):
        mem = EpisodicMemory(make_spaces())
        mem.record(make_record(0, [0.2, 0.3]))
        assert len(mem) == 1
        assert mem.size("effector") == 1
        assert mem.size("pen") == 0

    def test_failure_episode_is_still_stored(self):
        mem = EpisodicMemory(make_spaces())
        rec = make_record(0, [0.2, 0.3], space="pen", competence=-1.0)
        rec.reached["pen"] = None  # goal space produced nothing
        mem.record(rec)
        assert len(mem) == 1
        assert mem.size("pen") == 0

    def test_out_of_order_episode_rejected(self):
        mem = EpisodicMemory(make_spaces())
        with pytest.raises(MemoryRejection):
            mem.record(make_record(3, [0.2, 0.3]))

    def test_out_of_bounds_outcome_rejected(self):
        mem = EpisodicMemory(make_spaces())
        rec = make_record(0, [0.0, 0.0])
        rec.reached["effector"] = Outcome("effector", np.array([2.0, 0.0]))
        with pytest.raises(MemoryRejection):
            mem.record(rec)


class TestNearest:
    def test_exact_hit(self):
        mem = EpisodicMemory(make_spaces())
        mem.record(make_record(0, [0.2, 0.3]))
        mem.record(make_record(1, [-0.5, 0.1]))
        hits = mem.nearest("effector", np.array([0.2, 0.3]), k=1)
        assert hits[0].distance == pytest.approx(0.0)
        assert hits[0].record.episode == 0

    def test_empty_space_returns_nothing(self):
        mem = EpisodicMemory(make_spaces())
        assert mem.nearest("pen", np.array([0.0, 0.0]), k=3) == []

    def test_tie_prefers_older_record(self):
        mem = EpisodicMemory(make_spaces())
        mem.record(make_record(0, [0.5, 0.0]))
        mem.record(make_record(1, [-0.5, 0.0]))
        hits = mem.nearest("effector", np.array([0.0, 0.0]), k=1)
        assert hits[0].record.episode == 0

    def test_k_truncates_to_store_size(self):
        mem = EpisodicMemory(make_spaces())
        mem.record(make_record(0, [0.5, 0.0]))
        hits = mem.nearest("effector", np.array([0.0, 0.0]), k=5)
        assert len(hits) == 1

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(7)
        mem = EpisodicMemory(make_spaces())
        pts = rng.uniform(-1.0, 1.0, size=(100, 2))
        for i, p in enumerate(pts):
            mem.record(make_record(i, p))
        for _ in range(20):
            q = rng.uniform(-1.0, 1.0, size=2)
            hits = mem.nearest("effector", q, k=5)
            # oracle: brute-force distance sort over the raw points
            dists = np.linalg.norm(pts - q, axis=1)
            expected = np.argsort(dists, kind="stable")[:5]
            got = [h.record.episode for h in hits]
            assert got == list(expected)

    @given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50, deadline=None)
    def test_nearest_is_sorted_by_distance(self, n, seed):
        rng = np.random.default_rng(seed)
        mem = EpisodicMemory(make_spaces())
        for i in range(n):
            mem.record(make_record(i, rng.uniform(-1, 1, size=2)))
        q = rng.uniform(-1, 1, size=2)
        hits = mem.nearest("effector", q, k=n)
        ds = [h.distance for h in hits]
        assert ds == sorted(ds)


class TestStepBuffers:
    def test_displacement_stats_skip_zero_steps(self):
        mem = EpisodicMemory(make_spaces())
        rec = make_record(0, [0.4, 0.0], n_prims=2)
        rec.stepwise["effector"] = np.array([[0.0, 0.0], [0.4, 0.0], [0.4, 0.0]])
        mem.record(rec)
        # only the moving step counts
        assert mem.reach_r95("effector") == pytest.approx(0.4)
        assert mem.reach_r95("pen") is None

    def test_recent_steps_shapes(self):
        mem = EpisodicMemory(make_spaces())
        for i in range(3):
            mem.record(make_record(i, [0.1 * i, 0.0], n_prims=2))
        actions, deltas, contexts, episodes = mem.recent_steps(4)
        assert actions.shape == (4, 3)
        assert deltas["effector"].shape == (4, 2)
        assert contexts.shape == (4, 2)
        assert list(episodes) == [1, 1, 2, 2]

    def test_rolling_window_trims_oldest(self):
        mem = EpisodicMemory(make_spaces(), step_window=5)
        for i in range(4):
            mem.record(make_record(i, [0.1, 0.1], n_prims=2))
        actions, _, _, episodes = mem.recent_steps(100)
        assert actions.shape[0] == 5
        assert list(episodes) == [1, 2, 2, 3, 3]


class TestLogRows:
    def test_fixed_key_order_and_sentinel(self):
        mem = EpisodicMemory(make_spaces())
        rec = make_record(0, [0.2, 0.3], space="pen", competence=-1.0)
        rec.reached["pen"] = None
        mem.record(rec)
        row = next(iter(mem.iter_log_rows()))
        assert list(row.keys()) == [
            "episode",
            "strategy",
            "goal_space",
            "goal",
            "action_length",
            "reached",
            "competence",
        ]
        assert row["reached"] is None
        assert row["competence"] == -1.0
