"""Path walker: exactness without branching, unbiasedness with it, and
bit-identity between the scalar and vectorized routes."""

import numpy as np
import pytest

from conftest import axis, random_circuit, rotations_only, rx_dep_circuit
from pqcdiag import engine, oracle
from pqcdiag.channels import make_amplitude_damping, make_mmff
from pqcdiag.circuits import (Circuit, NoiseSite, Rotation, ThetaAssignment,
                              observable_from_terms, zero_state)
from pqcdiag.rng import RngStream, angle_indices, compose_stream


def random_theta(circuit, seed):
    r = np.random.default_rng(seed)
    return ThetaAssignment(r.integers(0, 4, size=circuit.n_params))


class TestExactness:
    def test_noiseless_walks_match_dense(self):
        for seed in range(6):
            c, obs, st = rotations_only(3, 7, seed=20 + seed)
            th = random_theta(c, seed)
            rep = engine.estimate_expectation(c, obs, st, th, n_tau=64,
                                              seed=seed)
            want = oracle.dense_expectation(c, th.as_radians(), obs, st)
            assert rep.mean == pytest.approx(want, abs=1e-12)
            # nothing branches: forced to a single exact pass
            assert rep.stderr == 0.0 and rep.n_tau == 1

    def test_diagonal_noise_is_still_exact(self):
        c, obs, st = rx_dep_circuit(0.3)
        th = ThetaAssignment(np.array([1]))
        rep = engine.estimate_expectation(c, obs, st, th, n_tau=32)
        assert rep.mean == pytest.approx(
            oracle.dense_expectation(c, th.as_radians(), obs, st), abs=1e-14)
        assert rep.stderr == 0.0

    def test_enumeration_matches_dense_with_branching(self):
        for seed in range(8):
            c, obs, st = random_circuit(3, 6, seed=40 + seed)
            th = random_theta(c, seed)
            got = engine.enumerate_expectation_exact(c, obs, st, th)
            want = oracle.dense_expectation(c, th.as_radians(), obs, st)
            assert got == pytest.approx(want, abs=1e-10)

    def test_branch_cap_refuses_big_fanout(self):
        ops = [Rotation(axis(1, "X", (0,)), 0)]
        sites = [NoiseSite(0, make_amplitude_damping(0.1), (0, i), "gamma")
                 for i in range(20)]
        c = Circuit(1, ops, sites)
        assert engine.exact_branch_estimate(c) == 2 ** 20
        with pytest.raises(RuntimeError, match="enumeration"):
            engine.enumerate_expectation_exact(
                c, observable_from_terms([(1.0, "Z")]), zero_state(1),
                ThetaAssignment(np.array([0])))

    def test_exact_branch_estimate_ignores_diagonal(self):
        c, _, _ = rx_dep_circuit(0.2)
        assert engine.exact_branch_estimate(c) == 1


class TestSampling:
    def test_unbiased_vs_enumeration(self):
        c, obs, st = random_circuit(2, 5, seed=72)
        assert any(not s.channel.diagonal for s in c.noise_sites)
        th = random_theta(c, 1)
        exact = engine.enumerate_expectation_exact(c, obs, st, th)
        rep = engine.estimate_expectation(c, obs, st, th, n_tau=20000, seed=3)
        assert rep.stderr > 0.0
        assert abs(rep.mean - exact) < 4 * rep.stderr

    def test_outer_index_decorrelates_draws(self):
        c, obs, st = random_circuit(2, 5, seed=72)
        th = random_theta(c, 1)
        a = engine.estimate_expectation(c, obs, st, th, n_tau=4, seed=0,
                                        outer_index=0)
        b = engine.estimate_expectation(c, obs, st, th, n_tau=4, seed=0,
                                        outer_index=1)
        again = engine.estimate_expectation(c, obs, st, th, n_tau=4, seed=0,
                                            outer_index=0)
        assert a.mean == again.mean
        assert a.mean != b.mean  # same angles, different inner draws

    def test_dead_branch_terminates_with_zero(self):
        # backward X hits the measure-and-reset channel's zero column
        c = Circuit(1, [Rotation(axis(1, "Z", (0,)), 0)],
                    [NoiseSite(0, make_mmff(""), (0, 0), None)])
        out = engine.backprop_term(c, ThetaAssignment(np.array([0])),
                                   axis(1, "X", (0,)), zero_state(1),
                                   RngStream(seed=0, stream_id=0))
        assert out.terminal and out.value == 0.0

    def test_trace_collection(self):
        c, obs, st = rx_dep_circuit(0.1)
        out = engine.backprop_term(c, ThetaAssignment(np.array([1])),
                                   axis(1, "Z", (0,)), st,
                                   RngStream(seed=0, stream_id=0),
                                   collect_trace=True)
        assert out.trace is not None and len(out.trace) >= 2


class TestBatchedWalker:
    def test_scalar_and_batch_are_bit_identical(self):
        c, obs, st = random_circuit(3, 6, seed=55)
        th = random_theta(c, 2)
        seed = 17
        words = [w for _, w in obs.terms]
        x0, z0 = engine.words_for_paulis(words, c.n)
        streams = np.array([compose_stream(9, 4, t)
                            for t in range(len(words))], dtype=np.uint64)
        theta_b = engine.MaterializedTheta(
            np.tile(th.values, (len(words), 1)))
        batch = engine.run_backward_batch(c, st, x0, z0, theta_b, seed=seed,
                                          stream_ids=streams)
        for t, w in enumerate(words):
            scalar = engine.backprop_term(
                c, th, w, st, RngStream(seed=seed, stream_id=int(streams[t])))
            assert scalar.value == batch[t]  # exactly, not approximately

    def test_batch_exact_mode_sums_branches(self):
        c, obs, st = random_circuit(2, 5, seed=77)
        th = random_theta(c, 3)
        words = [w for _, w in obs.terms]
        coeffs = np.array([cf for cf, _ in obs.terms])
        x0, z0 = engine.words_for_paulis(words, c.n)
        theta_b = engine.MaterializedTheta(np.tile(th.values, (len(words), 1)))
        vals = engine.run_backward_batch(c, st, x0, z0, theta_b, exact=True)
        got = float(coeffs @ vals) + obs.identity_offset
        assert got == pytest.approx(
            engine.enumerate_expectation_exact(c, obs, st, th), abs=1e-12)

    def test_collect_flags_sees_site_words(self):
        # site sits on qubit 1; a Z0 observable never touches it, a Z1 does
        ops = [Rotation(axis(2, "X", (0,)), 0), Rotation(axis(2, "X", (1,)), 1)]
        site = NoiseSite(1, make_amplitude_damping(0.2, (1,)), (0, 0), "gamma")
        c = Circuit(2, ops, [site])
        words = [axis(2, "Z", (0,)), axis(2, "Z", (1,))]
        x0, z0 = engine.words_for_paulis(words, 2)
        theta_b = engine.MaterializedTheta(np.zeros((2, 2), dtype=np.uint8))
        streams = np.array([compose_stream(0, 0, t) for t in range(2)],
                           dtype=np.uint64)
        vals, flags = engine.run_backward_batch(
            c, zero_state(2), x0, z0, theta_b, stream_ids=streams,
            collect_flags=True)
        assert flags.shape == (2, 1)
        assert not flags[0, 0] and flags[1, 0]
        assert vals[0] == 1.0  # untouched Z0 walk closes exactly

    def test_collect_flags_rejected_in_exact_branching_mode(self):
        c, obs, st = random_circuit(2, 4, seed=78)
        assert any(not s.channel.diagonal for s in c.noise_sites)
        words = [w for _, w in obs.terms]
        x0, z0 = engine.words_for_paulis(words, c.n)
        theta_b = engine.MaterializedTheta(
            np.zeros((len(words), c.n_params), dtype=np.uint8))
        with pytest.raises(ValueError):
            engine.run_backward_batch(c, st, x0, z0, theta_b, exact=True,
                                      collect_flags=True)

    def test_forward_batch_round_trip(self):
        # forward then backward through the same noiseless circuit restores
        # the word, so closing against the state gives the original trace
        c, obs, st = rotations_only(2, 5, seed=91)
        th = random_theta(c, 5)
        w0 = axis(2, "ZZ", (0, 1))
        x0, z0 = engine.words_for_paulis([w0], 2)
        theta_b = engine.MaterializedTheta(th.values[None, :])
        x1, z1, w1, _ = engine.run_forward_batch(c, x0, z0, theta_b)
        v = engine.run_backward_batch(c, st, x1, z1, theta_b, w0=w1)
        from pqcdiag.paulis import trace_pauli_with_entries
        assert v[0] == pytest.approx(
            trace_pauli_with_entries(w0, st.entries), abs=1e-12)


class TestThetaContainers:
    def test_hashed_matches_angle_indices(self):
        uids = np.arange(40, dtype=np.uint64)
        ht = engine.HashedTheta(5, uids)
        want = angle_indices(5, uids, 7)
        for k in range(7):
            assert np.array_equal(ht.k_for(k), want[:, k])

    def test_hashed_take_keeps_uids(self):
        uids = np.arange(10, dtype=np.uint64)
        ht = engine.HashedTheta(2, uids).take(np.array([3, 3, 8]))
        assert np.array_equal(ht.k_for(0),
                              angle_indices(2, np.array([3, 3, 8],
                                                        dtype=np.uint64), 1)[:, 0])

    def test_hashed_shift_is_quarter_turn(self):
        uids = np.arange(16, dtype=np.uint64)
        base = engine.HashedTheta(7, uids)
        shifted = engine.HashedTheta(
            7, uids, shift_param=np.full(16, 2, dtype=np.int64),
            shift_delta=np.full(16, 1, dtype=np.int64))
        assert np.array_equal(shifted.k_for(1), base.k_for(1))
        assert np.array_equal(shifted.k_for(2), (base.k_for(2) + 1) % 4)

    def test_materialized_take(self):
        m = engine.MaterializedTheta(np.arange(12, dtype=np.uint8).reshape(4, 3) % 4)
        t = m.take(np.array([2, 0]))
        assert np.array_equal(t.values, m.values[[2, 0]])
        assert len(t) == 2
