import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splamp.knapsack import (
    Group,
    KnapsackInstance,
    brute_force_oracle,
    group_knapsack,
    zero_one_knapsack,
)


def inst(layers, capacity):
    return KnapsackInstance(
        layers=[[Group(cost=c, score=s) for c, s in groups] for groups in layers],
        capacity=capacity,
    )


@st.composite
def random_instances(draw, max_layers=5, max_groups=7, max_step=20):
    """Nested-prefix instances with dyadic scores so float sums are exact."""
    n_layers = draw(st.integers(1, max_layers))
    layers = []
    for _ in range(n_layers):
        n_groups = draw(st.integers(1, max_groups))
        costs = sorted(draw(st.lists(st.integers(0, max_step),
                                     min_size=n_groups, max_size=n_groups)))
        scores_64 = sorted(draw(st.lists(st.integers(0, 64),
                                         min_size=n_groups, max_size=n_groups)))
        layers.append(list(zip(costs, [s / 64.0 for s in scores_64])))
    capacity = draw(st.integers(0, 60))
    return inst(layers, capacity)


class TestGroupKnapsack:
    def test_two_layer_hand_example(self):
        # feasible combos enumerated by hand; optimum is L1 group1 + L2 group2
        instance = inst([[(2, 0.4), (5, 0.7)], [(3, 0.5), (4, 0.9)]], capacity=7)
        sol = group_knapsack(instance)
        assert sol.chosen == [1, 2]
        assert sol.total_score == pytest.approx(1.3)
        assert sol.total_cost == 6
        assert sol.kept_counts == [2, 3]

    def test_capacity_zero_chooses_nothing(self):
        sol = group_knapsack(inst([[(1, 0.5)], [(2, 0.25)]], capacity=0))
        assert sol.chosen == [0, 0]
        assert sol.total_score == 0.0
        assert sol.kept_counts == [1, 1]

    def test_single_layer_prefers_high_score(self):
        sol = group_knapsack(inst([[(1, 0.2), (3, 0.9)]], capacity=3))
        assert sol.chosen == [2]
        assert sol.total_score == pytest.approx(0.9)

    def test_zero_cost_groups_always_selectable(self):
        sol = group_knapsack(inst([[(0, 0.25), (0, 0.5)]], capacity=0))
        assert sol.chosen == [2]

    def test_equal_score_prefers_lower_cost(self):
        # both groups reach 0.5; the cheaper one must win
        sol = group_knapsack(inst([[(2, 0.5), (9, 0.5)]], capacity=10))
        assert sol.chosen == [1]
        assert sol.total_cost == 2

    def test_lexicographic_tie_break_across_layers(self):
        # two optima with equal score and cost: (none, g1) and (g1, none);
        # the lexicographically smaller chosen vector picks layer 1 none
        instance = inst([[(3, 0.5)], [(3, 0.5)]], capacity=3)
        sol = group_knapsack(instance)
        oracle = brute_force_oracle(instance)
        assert sol.chosen == oracle.chosen == [0, 1]

    def test_rejects_non_monotone_groups(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            inst([[(5, 0.5), (3, 0.9)]], capacity=9)

    def test_rejects_negative_capacity(self):
        with pytest.raises(ValueError, match="capacity"):
            inst([[(1, 0.5)]], capacity=-1)

    def test_frontier_is_monotone_and_ends_at_optimum(self):
        instance = inst([[(2, 0.4), (5, 0.7)], [(3, 0.5), (4, 0.9)]], capacity=9)
        sol = group_knapsack(instance)
        assert len(sol.frontier) == 10
        assert all(b >= a for a, b in zip(sol.frontier, sol.frontier[1:]))
        assert sol.frontier[-1] == sol.total_score


class TestOracle:
    def test_matches_hand_example(self):
        instance = inst([[(2, 0.4), (5, 0.7)], [(3, 0.5), (4, 0.9)]], capacity=7)
        sol = brute_force_oracle(instance)
        assert sol.total_score == pytest.approx(1.3)
        assert sol.total_cost == 6

    def test_empty_instance(self):
        sol = brute_force_oracle(inst([], capacity=5))
        assert sol.chosen == [] and sol.total_score == 0.0

    def test_too_large_instance_rejected(self):
        layers = [[(1, 0.5)] * 99] * 4  # 100^4 = 1e8 combos
        with pytest.raises(ValueError, match="too large"):
            brute_force_oracle(inst(layers, capacity=5))

    @settings(max_examples=150, deadline=None)
    @given(random_instances())
    def test_dp_equals_oracle(self, instance):
        dp = group_knapsack(instance)
        oracle = brute_force_oracle(instance)
        assert dp.total_score == oracle.total_score
        assert dp.total_cost == oracle.total_cost
        assert dp.chosen == oracle.chosen

    @settings(max_examples=60, deadline=None)
    @given(random_instances(max_layers=3, max_groups=4))
    def test_capacity_monotonicity(self, instance):
        lo = group_knapsack(instance)
        hi = group_knapsack(
            KnapsackInstance(layers=instance.layers, capacity=instance.capacity + 5)
        )
        assert hi.total_score >= lo.total_score

    @settings(max_examples=60, deadline=None)
    @given(random_instances())
    def test_feasibility_rechecked_by_summation(self, instance):
        sol = group_knapsack(instance)
        cost = sum(
            instance.layers[l][c - 1].cost for l, c in enumerate(sol.chosen) if c
        )
        assert cost == sol.total_cost <= instance.capacity
        assert all(k >= 1 for k in sol.kept_counts)

    @settings(max_examples=60, deadline=None)
    @given(random_instances())
    def test_no_dominated_choice(self, instance):
        # nested prefixes: an equal-cost smaller group never beats the chosen one
        sol = group_knapsack(instance)
        for l, c in enumerate(sol.chosen):
            if c:
                g = instance.layers[l][c - 1]
                for i in range(c - 1):
                    other = instance.layers[l][i]
                    if other.cost == g.cost:
                        assert g.score >= other.score


class TestZeroOneBaseline:
    ADVERSARIAL = [("l1", 5, 0.01), ("l1", 5, 0.01), ("l2", 4, 0.9)]

    def test_adversarial_instance_empties_a_layer(self):
        sol = zero_one_knapsack(self.ADVERSARIAL, capacity=4)
        assert sol.kept_per_layer == {"l1": 0, "l2": 1}
        assert sol.total_score == pytest.approx(0.9)

    def test_group_solver_on_same_budget_cannot_empty(self):
        # group route: best filter per layer is mandatory and outside the DP;
        # the remaining l1 filter forms the only group
        instance = inst([[(5, 0.01)], []], capacity=4)
        sol = group_knapsack(instance)
        assert all(k >= 1 for k in sol.kept_counts)

    def test_everything_fits(self):
        sol = zero_one_knapsack(self.ADVERSARIAL, capacity=14)
        assert sol.kept_per_layer == {"l1": 2, "l2": 1}

    def test_capacity_zero(self):
        sol = zero_one_knapsack(self.ADVERSARIAL, capacity=0)
        assert sol.kept_per_layer == {"l1": 0, "l2": 0}
        assert sol.taken == []

    def test_matches_exhaustive_subsets(self):
        rng = np.random.default_rng(2)
        items = [
            (f"l{i % 3}", int(rng.integers(0, 8)), int(rng.integers(0, 64)) / 64.0)
            for i in range(10)
        ]
        capacity = 12
        best = -1.0
        for mask in range(1 << len(items)):
            cost = score = 0.0
            for i in range(len(items)):
                if mask >> i & 1:
                    cost += items[i][1]
                    score += items[i][2]
            if cost <= capacity:
                best = max(best, score)
        sol = zero_one_knapsack(items, capacity)
        assert sol.total_score == pytest.approx(best)
