import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisyor_um.inference import brute_force_marginals, exact_conditional_marginals
from noisyor_um.network import (
    NetworkError,
    NoisyOrNetwork,
    canonical_network_path,
    generate_random_network,
)

from conftest import all_states, tiny_network

networks = st.builds(
    generate_random_network,
    seed=st.integers(0, 10_000),
    layer_sizes=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
    edge_probability=st.floats(0.1, 1.0),
)


class TestGeneration:
    def test_same_seed_same_parameters(self):
        a = generate_random_network(7, (8, 8, 8), 0.4)
        b = generate_random_network(7, (8, 8, 8), 0.4)
        assert a.dumps() == b.dumps()
        assert a.n == 24

    def test_different_seed_differs(self):
        assert generate_random_network(7).dumps() != generate_random_network(8).dumps()

    def test_full_edges(self):
        net = generate_random_network(1, (2, 2, 2), 1.0)
        for d in net.disease_nodes:
            assert len(net.parents(d)) == 2
        assert net.edge_counts == (4, 4)

    @given(networks)
    def test_every_child_has_a_parent(self, net):
        assert net.disease_adjacency.any(axis=1).all()
        assert net.symptom_adjacency.any(axis=1).all()

    @pytest.mark.parametrize("bad", [(0.0, 0.5), (0.5, 1.0), (-0.1, 0.3)])
    def test_rejects_ranges_touching_the_boundary(self, bad):
        with pytest.raises(NetworkError):
            generate_random_network(0, param_ranges={"weights": bad})

    def test_rejects_bad_edge_probability(self):
        with pytest.raises(NetworkError):
            generate_random_network(0, edge_probability=0.0)

    def test_degenerate_parameters_need_the_unchecked_path(self):
        with pytest.raises(NetworkError):
            tiny_network(prior=0.0)
        tiny_network(prior=0.0, validate=False)

    def test_canonical_file_is_seed_7(self, canonical):
        assert canonical.same_parameters(generate_random_network(7, (8, 8, 8), 0.4))
        assert canonical.seed == 7


class TestConditionals:
    def test_prior_read(self):
        net = tiny_network(prior=0.3)
        assert net.prob_risk_factor_false(0) == 0.3

    def test_disease_leak_only_when_parents_false(self, canonical):
        rf = np.zeros(8)
        for i, d in enumerate(canonical.disease_nodes):
            assert canonical.prob_disease_false_given_parents(d, rf) == canonical.disease_leaks[i]

    def test_disease_single_parent(self):
        net = NoisyOrNetwork.create([0.5, 0.5], [0.9], [(1, 0, 0.5)], [0.9], [(0, 0, 0.5)])
        assert net.prob_disease_false_given_parents(2, [0, 1]) == pytest.approx(0.45, abs=1e-15)
        # RF0 is not a parent of D0
        assert net.prob_disease_false_given_parents(2, [1, 1]) == net.prob_disease_false_given_parents(2, [0, 1])

    def test_symptom_two_parents(self):
        net = NoisyOrNetwork.create([0.5], [0.9, 0.9], [(0, 0, 0.5), (0, 1, 0.5)], [0.99],
                                    [(0, 0, 0.2), (1, 0, 0.5)])
        assert net.prob_symptom_false_given_parents(3, [0, 0]) == 0.99
        assert net.prob_symptom_false_given_parents(3, [1, 1]) == pytest.approx(0.099, abs=1e-15)

    def test_symptom_monotone_in_true_parents(self, canonical):
        rng = np.random.default_rng(0)
        for j in range(16, 24):
            d = np.zeros(8)
            prev = canonical.prob_symptom_false_given_parents(j, d)
            for k in rng.permutation(8):
                d[k] = 1
                cur = canonical.prob_symptom_false_given_parents(j, d)
                assert cur <= prev
                prev = cur

    def test_wrong_layer_index(self, canonical):
        with pytest.raises(IndexError):
            canonical.prob_risk_factor_false(8)
        with pytest.raises(IndexError):
            canonical.prob_symptom_false_given_parents(3, np.zeros(8))

    def test_prior_sums_to_one_over_rf_configurations(self, canonical):
        configs = all_states(8).astype(float)
        pi = canonical.rf_priors
        total = np.prod(np.where(configs == 1, 1 - pi, pi), axis=1).sum()
        assert abs(total - 1.0) < 1e-12
        assert np.prod(pi) == pytest.approx(np.prod([canonical.prob_risk_factor_false(j) for j in range(8)]))


class TestJoint:
    def test_hand_value(self):
        assert tiny_network().joint_probability(np.zeros(3, dtype=int)) == pytest.approx(0.125, abs=1e-15)

    def test_normalises_on_six_nodes(self, small_net):
        assert abs(small_net.joint_probability(all_states(6)).sum() - 1.0) < 1e-10

    def test_log_joint_is_sum_of_node_terms(self, canonical):
        x = canonical.sample(20, np.random.default_rng(1))
        np.testing.assert_allclose(
            canonical.log_joint_probability(x), canonical.node_log_probabilities(x).sum(axis=1), rtol=0, atol=1e-12
        )

    def test_length_mismatch(self, canonical):
        with pytest.raises(ValueError):
            canonical.joint_probability(np.zeros(23))

    @settings(max_examples=25, deadline=None)
    @given(networks)
    def test_positivity_and_normalisation(self, net):
        p = net.joint_probability(all_states(net.n))
        assert (p > 0).all()
        assert abs(p.sum() - 1.0) < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(networks, st.integers(0, 2**31))
    def test_toggling_a_non_parent_keeps_the_cpd(self, net, seed):
        rng = np.random.default_rng(seed)
        rf = rng.integers(0, 2, net.layer_sizes[0])
        for d in net.disease_nodes:
            for j in set(range(net.layer_sizes[0])) - net.parents(d):
                flipped = rf.copy()
                flipped[j] ^= 1
                assert net.prob_disease_false_given_parents(d, rf) == net.prob_disease_false_given_parents(d, flipped)


class TestSampling:
    def test_degenerate_prior_forces_true(self):
        net = tiny_network(prior=0.0, validate=False)
        x = net.sample(1000, np.random.default_rng(0))
        assert (x[:, 0] == 1).all()

    def test_seeded_streams_identical(self, canonical):
        a = canonical.sample(100, np.random.default_rng(3))
        b = canonical.sample(100, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
        r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
        np.testing.assert_array_equal(canonical.ancestral_sample(r1), canonical.ancestral_sample(r2))

    def test_empirical_marginals_match_exact(self, canonical):
        draws = 10**6
        x = canonical.sample(draws, np.random.default_rng(2024))
        exact = exact_conditional_marginals(canonical, {})
        stderr = np.sqrt(exact * (1 - exact) / draws)
        assert (np.abs(x.mean(axis=0) - exact) < 3 * stderr + 1e-12).all()


class TestMarkovBlanket:
    def test_fully_connected_222(self, full_222):
        # D_1 (global 2): parents RF0, RF1; children S0, S1; co-parent D_2 (global 3)
        assert full_222.markov_blanket(2) == {0, 1, 4, 5, 3}

    def test_childless_disease(self):
        net = NoisyOrNetwork.create([0.5, 0.5], [0.9, 0.9], [(0, 0, 0.5), (1, 1, 0.5)], [0.9], [(1, 0, 0.5)])
        assert net.markov_blanket(2) == {0}

    def test_excludes_self(self, canonical):
        for x in range(canonical.n):
            assert x not in canonical.markov_blanket(x)

    @settings(max_examples=30, deadline=None)
    @given(networks)
    def test_symmetric(self, net):
        for x in range(net.n):
            for y in net.markov_blanket(x):
                assert x in net.markov_blanket(y)

    def test_blanket_shields_node_on_canonical_network(self, canonical):
        """P(X | MB(X), extra) == P(X | MB(X)) for every node and any extra observed node."""
        rng = np.random.default_rng(5)
        for x in range(canonical.n):
            blanket = sorted(canonical.markov_blanket(x))
            others = [i for i in range(canonical.n) if i != x and i not in canonical.markov_blanket(x)]
            for _ in range(3):
                state = canonical.ancestral_sample(rng)
                ev = {i: int(state[i]) for i in blanket}
                base = exact_conditional_marginals(canonical, ev)[x]
                for extra in rng.choice(others, size=min(3, len(others)), replace=False):
                    for value in (0, 1):
                        p = exact_conditional_marginals(canonical, {**ev, int(extra): value})[x]
                        assert abs(p - base) < 1e-9

    def test_blanket_shields_node_brute_force(self):
        net = generate_random_network(4, (3, 3, 3), 0.5)
        rng = np.random.default_rng(0)
        for x in range(net.n):
            blanket = sorted(net.markov_blanket(x))
            others = [i for i in range(net.n) if i != x and i not in net.markov_blanket(x)]
            state = net.ancestral_sample(rng)
            ev = {i: int(state[i]) for i in blanket}
            base = brute_force_marginals(net, ev)[x]
            for extra in others:
                assert abs(brute_force_marginals(net, {**ev, extra: int(state[extra])})[x] - base) < 1e-9


class TestFileFormat:
    def test_round_trip_is_exact(self, tmp_path, canonical):
        path = tmp_path / "net.json"
        canonical.save(path)
        again = NoisyOrNetwork.load(path)
        assert again.same_parameters(canonical)
        for name in ("rf_priors", "disease_leaks", "disease_weights", "symptom_leaks", "symptom_weights"):
            np.testing.assert_array_equal(getattr(again, name), getattr(canonical, name))
        assert again.dumps() == canonical.dumps()

    def test_fields(self, canonical):
        data = canonical.to_dict()
        assert set(data) == {"layer_sizes", "rf_priors", "disease_leaks", "disease_edges", "symptom_leaks",
                             "symptom_edges", "seed", "format_version"}
        assert all(len(e) == 3 for e in data["disease_edges"])

    def test_version_checked(self, canonical):
        data = canonical.to_dict()
        data["format_version"] = 99
        with pytest.raises(NetworkError):
            NoisyOrNetwork.from_dict(data)

    def test_shipped_file_present(self):
        assert canonical_network_path().exists()

    def test_floats_written_exactly(self, canonical):
        # repr of a float is its shortest exact decimal form
        for v in canonical.to_dict()["rf_priors"]:
            assert float(repr(v)) == v
            assert math.isfinite(v)
