"""Competence, progress-based interest over recursively split goal regions,
and the (strategy, task, goal) selector.

Every outcome space starts as one root region.  Each sampled goal lands in
exactly one leaf region; when a leaf accumulates more history than its
capacity it splits along the (dimension, quantile-cut) that best separates
low- from high-competence goals.  Interest of a (strategy, region) pair is
the absolute recent change in that strategy's mean competence there, plus a
small novelty bonus that decays as the pair gets visited.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from hiertask.core import DomainError, Outcome, OutcomeSpace


def competence(
    goal: Outcome, reached_value: Optional[np.ndarray], space: OutcomeSpace
) -> float:
    """Normalized negative distance in [-1, 0]; the not-produced sentinel
    (None) earns the floor -1."""
    if goal.space != space.space_id:
        raise DomainError(
            f"goal lives in {goal.space!r}, competence asked in {space.space_id!r}"
        )
    if reached_value is None:
        return -1.0
    dist = float(np.linalg.norm(goal.value - np.asarray(reached_value, dtype=float)))
    return -min(1.0, dist / space.diameter)


@dataclass
class RegionEntry:
    value: np.ndarray
    competence: float
    episode: int
    strategy: str


class Region:
    """An axis-aligned box of one outcome space plus the goals sampled in it."""

    __slots__ = ("region_id", "space_id", "lower", "upper", "entries", "children")

    def __init__(self, region_id: int, space_id: str, lower, upper):
        self.region_id = region_id
        self.space_id = space_id
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.entries: list[RegionEntry] = []
        self.children: Optional[tuple["Region", "Region"]] = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def contains(self, value: np.ndarray) -> bool:
        return bool(np.all(value >= self.lower - 1e-12) and np.all(value <= self.upper + 1e-12))

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


class InterestMap:
    def __init__(
        self,
        spaces: dict[str, OutcomeSpace],
        strategies: list[str],
        costs: dict[str, float],
        window: int = 20,
        capacity: int = 50,
        novelty_bonus: float = 0.01,
        exploit_prob: float = 0.7,
        uniform_prob: float = 0.2,
        random_prob: float = 0.1,
        quantile_cuts: int = 5,
    ):
        if abs(exploit_prob + uniform_prob + random_prob - 1.0) > 1e-9:
            raise DomainError("selection mode probabilities must sum to 1")
        self.spaces = dict(spaces)
        self.strategies = list(strategies)
        self.costs = dict(costs)
        self.window = window
        self.capacity = capacity
        self.novelty_bonus = novelty_bonus
        self.exploit_prob = exploit_prob
        self.uniform_prob = uniform_prob
        self.random_prob = random_prob
        self.quantile_cuts = quantile_cuts
        self._next_region_id = 0
        self.roots: dict[str, Region] = {}
        self._leaves: dict[str, list[Region]] = {}
        for sid, sp in self.spaces.items():
            root = self._new_region(sid, sp.lower, sp.upper)
            self.roots[sid] = root
            self._leaves[sid] = [root]
        # interest cache per (strategy, region id); refreshed on update
        self._interest: dict[tuple[str, int], float] = {}
        for sid in self.spaces:
            for strat in self.strategies:
                self._interest[(strat, self._leaves[sid][0].region_id)] = (
                    self.novelty_bonus
                )

    def _new_region(self, space_id: str, lower, upper) -> Region:
        r = Region(self._next_region_id, space_id, lower, upper)
        self._next_region_id += 1
        return r

    # -- queries -----------------------------------------------------------

    def leaves(self, space_id: str) -> list[Region]:
        return list(self._leaves[space_id])

    def locate(self, space_id: str, value: np.ndarray) -> Region:
        """The unique leaf containing a value (ties at shared cut boundaries
        go to the lower child by construction)."""
        node = self.roots[space_id]
        while not node.is_leaf:
            left, right = node.children
            node = left if left.contains(value) else right
        if not node.contains(value):
            raise DomainError(
                f"value {value} escapes the partition of {space_id!r}"
            )
        return node

    def region_interest(self, region: Region, strategy: str) -> float:
        """|mean of newest half - mean of oldest half| of the last `window`
        competences this strategy collected here, plus a novelty bonus
        1/(1+n) scaled; below 4 entries only the novelty term is defined."""
        comps = [e.competence for e in region.entries if e.strategy == strategy]
        n = len(comps)
        novelty = self.novelty_bonus / (1.0 + n)
        if n < 4:
            return novelty
        recent = comps[-self.window :]
        half = len(recent) // 2
        newest = recent[-half:]
        oldest = recent[:half]
        progress = abs(float(np.mean(newest)) - float(np.mean(oldest)))
        return progress + novelty

    def interest_of(self, strategy: str, region: Region) -> float:
        return self._interest[(strategy, region.region_id)]

    # -- selection ---------------------------------------------------------

    def select(self, rng: np.random.Generator) -> tuple[str, str, np.ndarray]:
        """Pick (strategy, space, goal).  Three modes: exploit the best
        interest-per-cost pair, sample a uniform (strategy, region) pair, or
        go fully random over (strategy, space, free goal)."""
        u = rng.random()
        if u < self.exploit_prob + self.uniform_prob:
            pairs = [
                (strat, region)
                for strat in self.strategies
                for sid in self.spaces
                for region in self._leaves[sid]
            ]
            if u < self.exploit_prob:
                best = None
                best_score = -np.inf
                for strat, region in pairs:
                    score = self._interest[(strat, region.region_id)] / self.costs[strat]
                    if score > best_score + 1e-15:
                        best, best_score = (strat, region), score
                strat, region = best
            else:
                strat, region = pairs[int(rng.integers(len(pairs)))]
            goal = region.lower + rng.random(region.lower.size) * (
                region.upper - region.lower
            )
            return strat, region.space_id, goal
        strat = self.strategies[int(rng.integers(len(self.strategies)))]
        sids = list(self.spaces)
        sid = sids[int(rng.integers(len(sids)))]
        goal = self.spaces[sid].uniform(rng)
        return strat, sid, goal

    # -- learning ----------------------------------------------------------

    def update(
        self, goal: Outcome, strategy: str, comp: float, episode: int
    ) -> None:
        region = self.locate(goal.space, goal.value)
        region.entries.append(
            RegionEntry(
                value=np.asarray(goal.value, dtype=float),
                competence=float(comp),
                episode=episode,
                strategy=strategy,
            )
        )
        if len(region.entries) > self.capacity:
            self.split(region)
        else:
            for strat in self.strategies:
                self._interest[(strat, region.region_id)] = self.region_interest(
                    region, strat
                )

    def split(self, region: Region) -> tuple[Region, Region]:
        """Replace a leaf by two children separated at the quantile cut that
        best contrasts competence, over every dimension.

        Score of a candidate cut: |n_left * n_right| * |mean_comp_left -
        mean_comp_right|.  Ties (including the all-equal-competence case where
        every score is zero) fall back deterministically: lowest dimension,
        lowest cut; if nothing separates the entries at all, the box midpoint
        of dimension 0.
        """
        if region.children is not None:
            raise DomainError("region already split")
        values = np.stack([e.value for e in region.entries])
        comps = np.array([e.competence for e in region.entries])
        dim = values.shape[1]
        best: Optional[tuple[int, float]] = None
        best_score = 0.0
        qs = [(i + 1) / (self.quantile_cuts + 1) for i in range(self.quantile_cuts)]
        for d in range(dim):
            coords = values[:, d]
            for q in qs:
                cut = float(np.quantile(coords, q))
                left = coords <= cut
                n_l = int(left.sum())
                n_r = int((~left).sum())
                if n_l == 0 or n_r == 0:
                    continue
                if cut <= region.lower[d] + 1e-12 or cut >= region.upper[d] - 1e-12:
                    continue
                score = abs(n_l * n_r) * abs(
                    float(comps[left].mean()) - float(comps[~left].mean())
                )
                if score > best_score + 1e-15:
                    best, best_score = (d, cut), score
        if best is None:
            best = (0, float((region.lower[0] + region.upper[0]) / 2.0))
        d, cut = best
        lo_upper = region.upper.copy()
        lo_upper[d] = cut
        hi_lower = region.lower.copy()
        hi_lower[d] = cut
        left_child = self._new_region(region.space_id, region.lower, lo_upper)
        right_child = self._new_region(region.space_id, hi_lower, region.upper)
        for e in region.entries:
            (left_child if e.value[d] <= cut else right_child).entries.append(e)
        region.children = (left_child, right_child)
        leaves = self._leaves[region.space_id]
        leaves[leaves.index(region)] = left_child
        leaves.insert(leaves.index(left_child) + 1, right_child)
        for strat in self.strategies:
            self._interest.pop((strat, region.region_id), None)
            for child in (left_child, right_child):
                self._interest[(strat, child.region_id)] = self.region_interest(
                    child, strat
                )
        return left_child, right_child

    # -- invariants and export --------------------------------------------

    def check_partition(self) -> None:
        """Structural partition check: leaves tile their parent boxes exactly
        and the root box equals the space box."""
        for sid, sp in self.spaces.items():
            root = self.roots[sid]
            if not (
                np.array_equal(root.lower, sp.lower)
                and np.array_equal(root.upper, sp.upper)
            ):
                raise DomainError(f"root region of {sid!r} does not match the space")
            stack = [root]
            seen_leaves = []
            while stack:
                node = stack.pop()
                if node.is_leaf:
                    seen_leaves.append(node)
                    continue
                left, right = node.children
                # children must tile the parent exactly along one axis
                diff_lo = left.lower != node.lower
                diff_hi = right.upper != node.upper
                if np.any(diff_lo) or np.any(diff_hi):
                    raise DomainError(f"children of region {node.region_id} leak")
                axis = np.nonzero(left.upper != node.upper)[0]
                if len(axis) != 1 or left.upper[axis[0]] != right.lower[axis[0]]:
                    raise DomainError(
                        f"children of region {node.region_id} do not share a cut"
                    )
                stack.extend(node.children)
            if {r.region_id for r in seen_leaves} != {
                r.region_id for r in self._leaves[sid]
            }:
                raise DomainError(f"leaf list of {sid!r} out of sync with the tree")
            total = sum(r.volume() for r in seen_leaves)
            if not np.isclose(total, self.roots[sid].volume(), rtol=1e-9):
                raise DomainError(f"leaf volumes of {sid!r} do not tile the space")

    def export_tree(self) -> str:
        out = []
        for sid in self.spaces:
            out.append(f"space {sid}")

            def walk(node: Region, indent: int):
                pad = "  " * indent
                box = ", ".join(
                    f"[{lo:.3f}, {hi:.3f}]" for lo, hi in zip(node.lower, node.upper)
                )
                if node.is_leaf:
                    interests = " ".join(
                        f"{strat}={self._interest[(strat, node.region_id)]:.4f}"
                        for strat in self.strategies
                    )
                    out.append(
                        f"{pad}leaf #{node.region_id} {box} entries={len(node.entries)} {interests}"
                    )
                else:
                    out.append(f"{pad}node #{node.region_id} {box}")
                    for child in node.children:
                        walk(child, indent + 1)

            walk(self.roots[sid], 1)
        return "\n".join(out) + "\n"
