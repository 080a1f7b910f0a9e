import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stafnet.activation import SharingMode
from stafnet.errors import CapacityError, PreconditionError, ValidationError
from stafnet.kronecker import (
    add_dummy_layer,
    build_equivalent,
    count_distinct,
    delannoy_count,
    enumerate_lattice,
    equivalence_gap,
    first_layer_embedding,
    potential_frequencies,
    random_theorem_network,
    tau_expansion_ratio,
    to_per_network,
    verify_equivalence,
)
from stafnet.network import ActivationKind, NetworkConfig, build_network


def brute_lattice(T, K):
    return sorted(s for s in itertools.product(range(-K, K + 1), repeat=T) if sum(map(abs, s)) <= K)


def inputs(n, d, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (n, d))


class TestEquivalence:
    @pytest.mark.parametrize("widths", [[2, 3, 1], [1, 4, 2, 5, 1], [3, 1, 1]])
    def test_even_depth(self, widths):
        net = random_theorem_network(widths, tau=3, seed=5)
        eq = build_equivalent(net)
        assert equivalence_gap(net, eq, inputs(100, widths[0])) < 1e-9
        assert eq.hidden_widths == [3 * w for w in widths[1:]]

    def test_odd_depth_needs_dummy(self):
        net = random_theorem_network([2, 4, 3, 1], tau=2, seed=1)
        with pytest.raises(PreconditionError, match="odd"):
            build_equivalent(net)
        padded = add_dummy_layer(net)
        x = inputs(50, 2)
        np.testing.assert_array_equal(padded(x), net(x))
        assert equivalence_gap(padded, build_equivalent(padded), x) < 1e-9

    def test_tau_one_is_sine(self):
        net = random_theorem_network([2, 5, 1], tau=1, seed=0)
        assert build_equivalent(net).network.config.activation is ActivationKind.SINE
        assert equivalence_gap(net, build_equivalent(net), inputs(20, 2)) < 1e-12

    def test_rejects_wrong_forms(self):
        base = dict(input_dim=2, output_dim=1, hidden_widths=[3], tau=2, activated_output=True)
        with pytest.raises(PreconditionError, match="per-network"):
            build_equivalent(build_network(NetworkConfig(**base)))
        with pytest.raises(PreconditionError, match="activated"):
            build_equivalent(build_network(NetworkConfig(**{**base, "activated_output": False}, sharing="per-network")))
        with pytest.raises(PreconditionError, match="STAF"):
            build_equivalent(build_network(NetworkConfig(**base, activation="sine")))

    def test_to_per_network(self):
        cfg = NetworkConfig(2, 1, [3], tau=2, activated_output=True)
        net = build_network(cfg)
        with pytest.raises(PreconditionError, match="different triples"):
            to_per_network(net)
        net.activations[1] = net.activations[0].copy()
        shared = to_per_network(net)
        assert shared.config.sharing is SharingMode.PER_NETWORK
        x = inputs(30, 2)
        np.testing.assert_allclose(shared(x), net(x), atol=1e-15)
        with pytest.raises(PreconditionError, match="per-neuron"):
            to_per_network(build_network(NetworkConfig(2, 1, [3], sharing="per-neuron")))

    def test_verify_report(self):
        r = verify_equivalence([2, 3, 4, 1], tau=2, seed=7)
        assert r["L"] == 3 and r["dummy_layers_added"] == 1
        assert r["max_abs_diff"] < 1e-9

    @given(st.lists(st.integers(1, 5), min_size=3, max_size=6), st.integers(1, 4), st.integers(0, 10**6))
    def test_property_random_nets(self, widths, tau, seed):
        r = verify_equivalence(widths, tau, seed, n_inputs=20)
        assert r["max_abs_diff"] < 1e-9


class TestLattice:
    @pytest.mark.parametrize("T,K,n", [(0, 3, 1), (3, 0, 1), (1, 4, 9), (2, 2, 13), (3, 3, 63), (4, 2, 41)])
    def test_delannoy_values(self, T, K, n):
        assert delannoy_count(T, K) == n

    @given(st.integers(0, 30), st.integers(0, 30))
    def test_delannoy_symmetric_and_recurrence(self, T, K):
        assert delannoy_count(T, K) == delannoy_count(K, T)
        if T and K:
            assert delannoy_count(T, K) == (
                delannoy_count(T - 1, K) + delannoy_count(T, K - 1) + delannoy_count(T - 1, K - 1)
            )

    @pytest.mark.parametrize("T,K", [(1, 3), (2, 2), (3, 2), (4, 1), (2, 0)])
    def test_enumeration_matches_brute_force(self, T, K):
        lat = enumerate_lattice(T, K)
        assert [tuple(r) for r in lat.points] == brute_lattice(T, K)
        assert len(lat) == delannoy_count(T, K)

    def test_cap(self):
        with pytest.raises(CapacityError):
            enumerate_lattice(10, 10, cap=1000)

    def test_bad_counts(self):
        with pytest.raises(ValidationError):
            delannoy_count(-1, 2)
        with pytest.raises(ValidationError):
            tau_expansion_ratio(2, 2, 0)

    def test_ratio(self):
        assert tau_expansion_ratio(2, 2, 2) == pytest.approx(41 / 13)
        assert tau_expansion_ratio(5, 3, 1) == 1.0


class TestFrequencies:
    def test_independent_psi_gives_full_count(self):
        fs = potential_frequencies(np.eye(3), 2)
        assert fs.n_distinct == delannoy_count(3, 2)

    def test_dependent_psi_collapses(self):
        fs = potential_frequencies([[1.0], [2.0]], 2)
        # s1 + 2 s2 with |s1| + |s2| <= 2 covers -4..4
        assert fs.n_distinct == 9 < len(fs.lattice)

    def test_tolerance_snaps(self):
        v = np.array([[0.0], [1e-12], [1.0]])
        assert count_distinct(v) == 3
        assert count_distinct(v, tol=1e-9) == 2
        assert count_distinct(np.array([[0.0], [-0.0]])) == 1

    def test_embedding(self):
        net = random_theorem_network([2, 4, 1], tau=3, seed=0)
        psi = first_layer_embedding(net)
        assert psi.shape == (12, 2)
        np.testing.assert_allclose(psi, build_equivalent(net).network.weights[0])
        sine = build_network(NetworkConfig(2, 1, [4], activation="sine", omega0=30.0))
        np.testing.assert_allclose(first_layer_embedding(sine), 30.0 * sine.weights[0])
