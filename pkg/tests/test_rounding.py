import itertools

import numpy as np
import pytest

import switchopt as so
from switchopt.errors import CapacityError


def runs_of(bits):
    """Maximal constant-run lengths, left to right."""
    lengths = [1]
    for a, b in zip(bits, bits[1:]):
        if a == b:
            lengths[-1] += 1
        else:
            lengths.append(1)
    return lengths


def sequence_feasible(bits, d, dmax=None, budget=None):
    """Independent dwell predicate: interior runs within [d, dmax], budgeted
    switch count.  Boundary runs are unconstrained."""
    lengths = runs_of(bits)
    interior = lengths[1:-1]
    if any(r < d for r in interior):
        return False
    if dmax is not None and any(r > dmax for r in interior):
        return False
    if budget is not None and len(lengths) - 1 > budget:
        return False
    return True


def all_feasible_sequences(n, n_values, d, dmax=None, budget=None):
    return [
        seq
        for seq in itertools.product(range(n_values), repeat=n)
        if sequence_feasible(seq, d, dmax, budget)
    ]


class TestSumUpRounding:
    def test_onehot_input_returned_unchanged(self):
        g = so.TimeGrid(0.0, 1.0, 8)
        rng = np.random.default_rng(0)
        sel = rng.integers(0, 3, 8)
        vals = np.zeros((8, 3))
        vals[np.arange(8), sel] = 1.0
        w = so.RelaxedControlPath(g, vals)
        assert np.array_equal(so.sum_up_rounding(w, g).values, vals)

    def test_hand_traced_sixty_forty(self):
        g = so.TimeGrid(0.0, 3.0, 3)
        w = so.RelaxedControlPath(g, np.full((3, 2), (0.6, 0.4)))
        out = so.sum_up_rounding(w, g)
        assert out.selected_modes().tolist() == [0, 1, 0]

    def test_tie_break_lowest_index_first(self):
        g = so.TimeGrid(0.0, 2.0, 2)
        w = so.RelaxedControlPath(g, np.full((2, 2), 0.5))
        out = so.sum_up_rounding(w, g)
        assert out.selected_modes().tolist() == [0, 1]

    def test_deviation_bound_random_sweep(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 201))
            m = int(rng.integers(2, 5))
            g = so.TimeGrid(0.0, float(n) * 0.137, n)
            vals = rng.random((n, m))
            vals /= vals.sum(axis=1, keepdims=True)
            w = so.RelaxedControlPath(g, vals)
            out = so.sum_up_rounding(w, g)
            bound = (m - 1) * g.step
            assert so.cia_deviation(w, out, g) <= bound * (1 + 1e-12)


def exhaustive_projection_cost(column, d, h, dmax=None, budget=None):
    """Minimal L1 projection cost by scanning every feasible sequence."""
    n = len(column)
    best = None
    for seq in all_feasible_sequences(n, 2, d, dmax, budget):
        cost = h * sum(abs(a - b) for a, b in zip(column, seq))
        if best is None or cost < best:
            best = cost
    return best


class TestDwellProject:
    def test_feasible_input_unchanged(self):
        g = so.TimeGrid(0.0, 1.0, 6)
        spec = so.CombinatorialSpec.uniform(1, 2)
        v = so.BinaryControlPath(g, [[0], [1], [1], [0], [0], [0]])
        out = so.dwell_project(v, spec, g)
        assert np.array_equal(out.values, v.values)

    def test_hand_case_cost_and_tie_break(self):
        for h in (0.5, 1.0):
            g = so.TimeGrid(0.0, 4 * h, 4)
            spec = so.CombinatorialSpec.uniform(1, 2)
            v = so.BinaryControlPath(g, [[0], [1], [0], [0]])
            out = so.dwell_project(v, spec, g)
            assert so.penalty_term(v, out, g) == pytest.approx(h)
            assert out.values[:, 0].tolist() == [0, 1, 1, 0]
            assert exhaustive_projection_cost([0, 1, 0, 0], 2, h) == pytest.approx(h)

    def test_alternating_path_matches_exhaustive(self):
        g = so.TimeGrid(0.0, 6.0, 6)
        spec = so.CombinatorialSpec.uniform(1, 3)
        v = so.BinaryControlPath(g, [[0], [1], [0], [1], [0], [1]])
        out = so.dwell_project(v, spec, g)
        assert so.check_feasible(out, spec, g).feasible
        assert so.penalty_term(v, out, g) == pytest.approx(
            exhaustive_projection_cost([0, 1, 0, 1, 0, 1], 3, 1.0)
        )

    def test_exhaustive_sweep_single_component(self):
        # Every instance: all binary paths, N up to 9 here (the acceptance
        # suite extends to 12), d in {1, 2, 3}.
        for n in range(1, 10):
            g = so.TimeGrid(0.0, float(n), n)
            for d in (1, 2, 3):
                spec = so.CombinatorialSpec.uniform(1, d)
                for bits in itertools.product((0, 1), repeat=n):
                    v = so.BinaryControlPath(g, np.array(bits).reshape(-1, 1))
                    out = so.dwell_project(v, spec, g)
                    assert so.check_feasible(out, spec, g).feasible
                    got = so.penalty_term(v, out, g)
                    want = exhaustive_projection_cost(list(bits), d, 1.0)
                    assert got == pytest.approx(want, abs=1e-12)

    def test_components_decompose(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 11))
            g = so.TimeGrid(0.0, float(n), n)
            d = int(rng.integers(1, 4))
            spec2 = so.CombinatorialSpec.uniform(2, d)
            spec1 = so.CombinatorialSpec.uniform(1, d)
            v = so.BinaryControlPath(g, rng.integers(0, 2, (n, 2)))
            out = so.dwell_project(v, spec2, g)
            cost = so.penalty_term(v, out, g)
            parts = 0.0
            for c in range(2):
                vc = so.BinaryControlPath(g, v.values[:, c:c + 1])
                parts += so.penalty_term(
                    vc, so.dwell_project(vc, spec1, g), g
                )
            assert cost == pytest.approx(parts, abs=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        g = so.TimeGrid(0.0, 10.0, 10)
        spec = so.CombinatorialSpec.uniform(2, 3)
        for _ in range(100):
            v = so.BinaryControlPath(g, rng.integers(0, 2, (10, 2)))
            once = so.dwell_project(v, spec, g)
            twice = so.dwell_project(once, spec, g)
            assert np.array_equal(once.values, twice.values)

    def test_max_dwell_and_budget_against_exhaustive(self):
        rng = np.random.default_rng(5)
        for _ in range(60):
            n = int(rng.integers(3, 9))
            g = so.TimeGrid(0.0, float(n), n)
            d = int(rng.integers(1, 3))
            dmax = d + int(rng.integers(0, 3))
            budget = int(rng.integers(0, 4))
            spec = so.CombinatorialSpec.uniform(
                1, d, max_dwell=dmax, max_switches=budget
            )
            bits = rng.integers(0, 2, n)
            v = so.BinaryControlPath(g, bits.reshape(-1, 1))
            out = so.dwell_project(v, spec, g)
            assert so.check_feasible(out, spec, g).feasible
            want = exhaustive_projection_cost(list(bits), d, 1.0, dmax, budget)
            assert so.penalty_term(v, out, g) == pytest.approx(want, abs=1e-12)

    def test_weighted_matches_plain_on_onehot(self):
        modes = so.enumerate_modes(2)
        rng = np.random.default_rng(6)
        g = so.TimeGrid(0.0, 8.0, 8)
        spec = so.CombinatorialSpec.uniform(2, 2)
        for _ in range(50):
            v = so.BinaryControlPath(g, rng.integers(0, 2, (8, 2)))
            w = so.binary_to_onehot(v, modes)
            plain = so.dwell_project(v, spec, g)
            weighted = so.dwell_project_weighted(w, modes, spec, g)
            assert so.penalty_term(v, plain, g) == pytest.approx(
                so.penalty_term(v, weighted, g)
            )

    def test_weighted_exact_against_exhaustive(self):
        modes = so.enumerate_modes(1)
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            g = so.TimeGrid(0.0, float(n), n)
            d = int(rng.integers(1, 4))
            spec = so.CombinatorialSpec.uniform(1, d)
            vals = rng.random((n, 2))
            vals /= vals.sum(axis=1, keepdims=True)
            w = so.RelaxedControlPath(g, vals)
            out = so.dwell_project_weighted(w, modes, spec, g)

            def weighted_cost(seq):
                return g.step * sum(
                    vals[k, j] * abs(j - seq[k])
                    for k in range(n) for j in range(2)
                )

            got = weighted_cost(out.values[:, 0].tolist())
            want = min(
                weighted_cost(seq) for seq in all_feasible_sequences(n, 2, d)
            )
            assert got == pytest.approx(want, abs=1e-12)

    def test_modewise_projection(self):
        g = so.TimeGrid(0.0, 5.0, 5)
        spec = so.CombinatorialSpec.uniform(1, 3, representation=so.MODEWISE)
        # Indicator path over three modes, middle run too short.
        vals = np.zeros((5, 3), dtype=int)
        for k, m in enumerate([0, 0, 1, 2, 2]):
            vals[k, m] = 1
        v = so.BinaryControlPath(g, vals)
        out = so.dwell_project(v, spec, g)
        assert so.check_feasible(out, spec, g).feasible


class TestDwellDpTable:
    def test_costs_non_decreasing_along_predecessor_chains(self):
        from switchopt.rounding import _DwellAutomaton, _solve_dwell_dp

        rng = np.random.default_rng(8)
        for _ in range(30):
            n = int(rng.integers(2, 12))
            costs = rng.random((n, 2))
            automaton = _DwellAutomaton(2, int(rng.integers(1, 4)), None, None)
            _, _, table = _solve_dwell_dp(costs, automaton)
            for s in range(automaton.n_states):
                cost = table.costs[-1, s]
                if not np.isfinite(cost):
                    continue
                k, state = n - 1, s
                while k > 0:
                    pred = table.predecessors[k, state]
                    assert table.costs[k - 1, pred] <= table.costs[k, state] + 1e-15
                    k, state = k - 1, pred

    def test_best_terminal_prefers_lowest_index_on_ties(self):
        from switchopt.rounding import _DwellAutomaton, _solve_dwell_dp

        automaton = _DwellAutomaton(2, 1, None, None)
        costs = np.zeros((3, 2))
        _, _, table = _solve_dwell_dp(costs, automaton)
        finite = np.isfinite(table.costs[-1])
        assert table.best_terminal() == int(np.argmax(finite))


def exhaustive_ciap(values, h, d, dmax=None, budget=None):
    """Best deviation over every dwell-feasible mode sequence."""
    n, m = values.shape
    best = np.inf
    for seq in all_feasible_sequences(n, m, d, dmax, budget):
        onehot = np.zeros((n, m))
        onehot[np.arange(n), list(seq)] = 1.0
        dev = np.abs(np.cumsum((values - onehot) * h, axis=0)).max()
        if dev < best:
            best = dev
    return float(best)


class TestConstrainedCiap:
    def test_feasible_onehot_returned_as_is(self):
        g = so.TimeGrid(0.0, 6.0, 6)
        spec = so.CombinatorialSpec.uniform(1, 2, representation=so.MODEWISE)
        vals = np.zeros((6, 2))
        for k, m in enumerate([0, 0, 1, 1, 0, 0]):
            vals[k, m] = 1.0
        w = so.RelaxedControlPath(g, vals)
        res = so.constrained_ciap(w, spec, g)
        assert res.deviation == 0.0
        assert res.proven_optimal
        assert np.array_equal(res.control.values, vals)

    def test_exactness_on_random_instances(self):
        rng = np.random.default_rng(777)
        for _ in range(200):
            n = int(rng.integers(2, 11))
            d = int(rng.integers(1, 4))
            g = so.TimeGrid(0.0, float(n) * 0.5, n)
            vals = rng.random((n, 2))
            vals /= vals.sum(axis=1, keepdims=True)
            w = so.RelaxedControlPath(g, vals)
            spec = so.CombinatorialSpec.uniform(1, d, representation=so.MODEWISE)
            res = so.constrained_ciap(w, spec, g)
            assert res.proven_optimal
            want = exhaustive_ciap(vals, g.step, d)
            assert res.deviation == pytest.approx(want, abs=1e-12)
            assert so.cia_deviation(w, res.control, g) == pytest.approx(
                res.deviation, abs=1e-12
            )

    def test_unconstrained_never_worse_than_rounding(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(2, 30))
            g = so.TimeGrid(0.0, float(n) * 0.2, n)
            vals = rng.random((n, 2))
            vals /= vals.sum(axis=1, keepdims=True)
            w = so.RelaxedControlPath(g, vals)
            spec = so.CombinatorialSpec.uniform(1, 1, representation=so.MODEWISE)
            res = so.constrained_ciap(w, spec, g)
            sur_dev = so.cia_deviation(w, so.sum_up_rounding(w, g), g)
            assert res.deviation <= sur_dev + 1e-12

    def test_dwell_constraint_enforced(self):
        rng = np.random.default_rng(13)
        g = so.TimeGrid(0.0, 10.0, 10)
        spec = so.CombinatorialSpec.uniform(1, 3, representation=so.MODEWISE)
        vals = rng.random((10, 3))
        vals /= vals.sum(axis=1, keepdims=True)
        w = so.RelaxedControlPath(g, vals)
        res = so.constrained_ciap(w, spec, g)
        assert so.check_feasible(
            so.BinaryControlPath(g, res.control.values.astype(int)), spec, g
        ).feasible

    def test_exactness_with_max_dwell_and_budget(self):
        rng = np.random.default_rng(29)
        for _ in range(60):
            n = int(rng.integers(3, 9))
            d = int(rng.integers(1, 3))
            dmax = d + int(rng.integers(0, 3))
            budget = int(rng.integers(0, 4))
            g = so.TimeGrid(0.0, float(n), n)
            vals = rng.random((n, 2))
            vals /= vals.sum(axis=1, keepdims=True)
            w = so.RelaxedControlPath(g, vals)
            spec = so.CombinatorialSpec.uniform(
                1, d, max_dwell=dmax, max_switches=budget,
                representation=so.MODEWISE,
            )
            res = so.constrained_ciap(w, spec, g)
            assert res.proven_optimal
            want = exhaustive_ciap(vals, g.step, d, dmax, budget)
            assert res.deviation == pytest.approx(want, abs=1e-12)
            assert so.check_feasible(
                so.BinaryControlPath(g, res.control.values.astype(int)), spec, g
            ).feasible

    def test_budget_exit_keeps_feasible_incumbent(self):
        rng = np.random.default_rng(17)
        g = so.TimeGrid(0.0, 30.0, 30)
        spec = so.CombinatorialSpec.uniform(1, 4, representation=so.MODEWISE)
        vals = rng.random((30, 4))
        vals /= vals.sum(axis=1, keepdims=True)
        w = so.RelaxedControlPath(g, vals)
        res = so.constrained_ciap(w, spec, g, max_nodes=40)
        assert not res.proven_optimal
        assert so.check_feasible(
            so.BinaryControlPath(g, res.control.values.astype(int)), spec, g
        ).feasible


class TestGlobalOracle:
    def test_sequence_count_matches_independent_enumeration(self):
        system, _, _ = so.build_fuller(so.FullerConfig(0.5, 4))
        grid = so.TimeGrid(0.0, 1.0, 4)
        spec = so.CombinatorialSpec.uniform(1, 2)
        res = so.global_oracle(system, grid, spec)
        sequences = all_feasible_sequences(4, 2, 2)
        # The oracle walks every feasible prefix; leaves equal sequences.
        assert res.proven_optimal
        assert res.nodes_explored >= len(sequences)
        best = min(
            so.objective(
                system,
                so.integrate(
                    system, grid, so.ContinuousControlPath.empty(grid),
                    so.binary_to_onehot(
                        so.BinaryControlPath(grid, np.array(seq).reshape(-1, 1)),
                        system.modes,
                    ),
                ),
            )
            for seq in sequences
        )
        assert res.best_value == pytest.approx(best, abs=1e-12)

    def test_dominates_heuristics_on_coarse_grid(self):
        system, grid, spec = so.build_fuller(so.FullerConfig(0.1, 20))
        res = so.global_oracle(system, grid, spec)
        assert res.proven_optimal
        ciap = so.ciap_heuristic(system, grid, spec)
        assert res.best_value <= ciap.objective + 1e-12

    def test_maximal_dwell_only_boundary_switch_patterns(self):
        n = 6
        system, _, _ = so.build_fuller(so.FullerConfig(0.5, n))
        grid = so.TimeGrid(0.0, 1.0, n)
        spec = so.CombinatorialSpec.uniform(1, n)
        res = so.global_oracle(system, grid, spec)
        sequences = all_feasible_sequences(n, 2, n)
        assert res.proven_optimal
        # With d = N only constant-or-one-switch patterns remain.
        for seq in sequences:
            assert len(runs_of(seq)) <= 2 or (
                len(runs_of(seq)) == 3 and runs_of(seq)[1] >= n
            )
        best = min(
            so.objective(
                system,
                so.integrate(
                    system, grid, so.ContinuousControlPath.empty(grid),
                    so.binary_to_onehot(
                        so.BinaryControlPath(grid, np.array(seq).reshape(-1, 1)),
                        system.modes,
                    ),
                ),
            )
            for seq in sequences
        )
        assert res.best_value == pytest.approx(best, abs=1e-12)

    def test_oracle_control_is_feasible(self):
        system, grid, spec = so.build_fuller(so.FullerConfig(0.15, 20))
        res = so.global_oracle(system, grid, spec)
        assert so.check_feasible(res.best_control, spec, grid).feasible

    def test_grid_cap(self):
        system, _, spec = so.build_fuller(so.FullerConfig(0.1, 40))
        grid = so.TimeGrid(0.0, 1.0, 40)
        with pytest.raises(CapacityError):
            so.global_oracle(system, grid, spec)

    def test_node_budget_gives_partial_result(self):
        system, grid, spec = so.build_fuller(so.FullerConfig(0.1, 20))
        res = so.global_oracle(system, grid, spec, max_nodes=50)
        assert not res.proven_optimal
        assert np.isfinite(res.best_value)

    def test_with_continuous_controls_solves_inner_problem(self, translines_coarse):
        system, _, _ = translines_coarse
        # Tiny horizon keeps the enumeration small; m_u > 0 triggers the
        # inner best-response solve at every complete sequence.
        cfg = so.translines_subgrid_config(volumes_per_line=2, n_time_steps=52)
        small = so.TranslinesConfig(
            nodes=cfg.nodes, lines=cfg.lines, switch_groups=cfg.switch_groups,
            producers=cfg.producers,
            consumers=tuple(
                (node, ((0.0, q0), (2.0, q0)))
                for (node, table), q0 in zip(cfg.consumers, (0.4, 0.3, 0.5, 0.2, 0.3))
            ),
            volumes_per_line=1, n_time_steps=4, t_end=2.0, tau_min=1.0,
        )
        sys_small, grid_small, spec_small = so.build_translines(small)
        opts = so.RelaxedSolveOptions(stationarity_tol=1e-3, max_iterations=40)
        res = so.global_oracle(
            sys_small, grid_small, spec_small,
            inner_solver=lambda w: so.best_response_continuous(
                sys_small, grid_small, w, opts
            ),
        )
        assert res.proven_optimal
        assert res.best_u is not None
        assert res.best_u.shape == (4, 2)
        # Any fixed-mode evaluation upper-bounds the oracle value.
        w_const = np.zeros((4, 4))
        w_const[:, 3] = 1.0
        _, val_const = so.best_response_continuous(sys_small, grid_small, w_const, opts)
        assert res.best_value <= val_const + 1e-9
