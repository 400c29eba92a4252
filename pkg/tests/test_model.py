import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoii_harq import (
    Action,
    DecoderProfile,
    LagrangianCostParams,
    ModelError,
    SourceChain,
    SystemState,
    check_state,
    enumerate_states,
    generate_random_source,
    lagrangian_cost,
    load_model,
    save_model,
    transition_distribution,
)

from conftest import REFERENCE_MATRIX


def dist_as_dict(pairs):
    return {st.astuple(): p for st, p in pairs}


class TestSourceChain:
    def test_rejects_non_square(self):
        with pytest.raises(ModelError, match="square"):
            SourceChain([[0.5, 0.5]])

    def test_rejects_bad_row_sum(self):
        with pytest.raises(ModelError, match="sums to"):
            SourceChain([[0.6, 0.5], [0.5, 0.5]])

    def test_rejects_negative_entries(self):
        with pytest.raises(ModelError, match=r"\[0, 1\]"):
            SourceChain([[1.2, -0.2], [0.5, 0.5]])

    def test_rejects_reducible(self):
        with pytest.raises(ModelError, match="irreducible"):
            SourceChain([[1.0, 0.0], [0.0, 1.0]])

    def test_matrix_is_read_only(self):
        chain = SourceChain([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ValueError):
            chain.transition[0, 0] = 0.0


class TestDecoderProfile:
    def test_success_values(self):
        dec = DecoderProfile(p_e=0.5, c=0.5, r_max=2)
        assert dec.success(0) == pytest.approx(0.5, abs=0)
        assert dec.success(1) == pytest.approx(0.75, abs=0)

    def test_success_domain(self):
        dec = DecoderProfile(p_e=0.5, c=0.5, r_max=2)
        with pytest.raises(ModelError):
            dec.success(2)
        with pytest.raises(ModelError):
            dec.success(-1)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(p_e=0.0, c=0.5, r_max=2),
            dict(p_e=1.0, c=0.5, r_max=2),
            dict(p_e=0.5, c=0.0, r_max=2),
            dict(p_e=0.5, c=1.1, r_max=2),
            dict(p_e=0.5, c=0.5, r_max=0),
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ModelError):
            DecoderProfile(**kwargs)


class TestCheckState:
    def test_accepts_valid(self):
        check_state(SystemState(1, 2, 3, 1), n_states=4, r_max=2)
        check_state(SystemState(2, 2, 0, 0), n_states=4, r_max=2)

    def test_rejects_matched_with_positive_age(self):
        with pytest.raises(ModelError, match="zero exactly when"):
            check_state(SystemState(2, 2, 3, 0), n_states=4, r_max=2)

    def test_rejects_mismatch_with_zero_age(self):
        with pytest.raises(ModelError, match="zero exactly when"):
            check_state(SystemState(1, 2, 0, 0), n_states=4, r_max=2)

    def test_rejects_out_of_range(self):
        with pytest.raises(ModelError):
            check_state(SystemState(5, 1, 1, 0), n_states=4, r_max=2)
        with pytest.raises(ModelError):
            check_state(SystemState(1, 2, 1, 3), n_states=4, r_max=2)
        with pytest.raises(ModelError):
            check_state(SystemState(1, 2, -1, 0), n_states=4, r_max=2)


class TestTransitionDistribution:
    def test_transmit_worked_example(self, reference_chain, reference_decoder):
        # hand-expanded one-slot distribution for transmit at (1,2,3,0):
        # success w.p. 0.5 hands the receiver sample 1, failure keeps 2 and
        # buffers the packet only if the source stays at 1
        got = dist_as_dict(
            transition_distribution(
                SystemState(1, 2, 3, 0), Action.TRANSMIT, reference_chain, reference_decoder
            )
        )
        expected = {
            (1, 1, 0, 0): 0.26,
            (2, 1, 4, 0): 0.06,
            (3, 1, 4, 0): 0.09,
            (4, 1, 4, 0): 0.09,
            (3, 2, 4, 0): 0.09,
            (4, 2, 4, 0): 0.09,
            (2, 2, 0, 0): 0.06,
            (1, 2, 4, 1): 0.26,
        }
        assert set(got) == set(expected)
        for key, prob in expected.items():
            assert got[key] == pytest.approx(prob, abs=1e-12)
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)

    def test_wait_from_same_state(self, reference_chain, reference_decoder):
        got = dist_as_dict(
            transition_distribution(
                SystemState(1, 2, 3, 0), Action.WAIT, reference_chain, reference_decoder
            )
        )
        expected = {
            (1, 2, 4, 0): 0.52,
            (2, 2, 0, 0): 0.12,
            (3, 2, 4, 0): 0.18,
            (4, 2, 4, 0): 0.18,
        }
        assert got == pytest.approx(expected, abs=1e-12)

    def test_r_saturates_at_r_max(self, reference_chain, reference_decoder):
        # a failed transmit with the source unchanged cannot push r past r_max,
        # and the decode probability stays at its best value
        got = dist_as_dict(
            transition_distribution(
                SystemState(1, 2, 5, 2), Action.TRANSMIT, reference_chain, reference_decoder
            )
        )
        assert got[(1, 2, 6, 2)] == pytest.approx(0.52 * 0.25, abs=1e-12)

    def test_matched_transmit_keeps_buffer_on_failure(
        self, reference_chain, reference_decoder
    ):
        # blind schedules may transmit while already matched; the packet
        # stays buffered when decoding fails with the source unchanged
        got = dist_as_dict(
            transition_distribution(
                SystemState(2, 2, 0, 0), Action.TRANSMIT, reference_chain, reference_decoder
            )
        )
        assert got[(2, 2, 0, 1)] == pytest.approx(0.57 * 0.5, abs=1e-12)
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_invalid_state(self, reference_chain, reference_decoder):
        with pytest.raises(ModelError):
            transition_distribution(
                SystemState(2, 2, 3, 0), Action.WAIT, reference_chain, reference_decoder
            )


@st.composite
def random_model(draw):
    n = draw(st.integers(min_value=2, max_value=5))
    raw = draw(
        st.lists(
            st.lists(st.floats(min_value=0.05, max_value=1.0), min_size=n, max_size=n),
            min_size=n,
            max_size=n,
        )
    )
    p = np.array(raw)
    p /= p.sum(axis=1, keepdims=True)
    chain = SourceChain(p)
    decoder = DecoderProfile(
        p_e=draw(st.floats(min_value=0.05, max_value=0.95)),
        c=draw(st.floats(min_value=0.1, max_value=1.0)),
        r_max=draw(st.integers(min_value=1, max_value=3)),
    )
    return chain, decoder


@st.composite
def model_state_action(draw):
    chain, decoder = draw(random_model())
    n = chain.n_states
    s = draw(st.integers(min_value=1, max_value=n))
    w = draw(st.integers(min_value=1, max_value=n))
    delta = 0 if s == w else draw(st.integers(min_value=1, max_value=30))
    r = draw(st.integers(min_value=0, max_value=decoder.r_max))
    action = draw(st.sampled_from([Action.WAIT, Action.TRANSMIT]))
    return chain, decoder, SystemState(s, w, delta, r), action


class TestKernelProperties:
    @given(model_state_action())
    @settings(max_examples=150, deadline=None)
    def test_stochastic_and_closed(self, case):
        chain, decoder, state, action = case
        pairs = transition_distribution(state, action, chain, decoder)
        total = sum(p for _, p in pairs)
        assert total == pytest.approx(1.0, abs=1e-12)
        seen = set()
        for st2, prob in pairs:
            assert prob > 0.0
            assert st2 not in seen, "successors must be merged by identity"
            seen.add(st2)
            check_state(st2, chain.n_states, decoder.r_max)
            # age resets exactly on agreement
            assert (st2.delta == 0) == (st2.s == st2.w)

    @given(model_state_action())
    @settings(max_examples=100, deadline=None)
    def test_wait_flushes_buffer_and_age_increments(self, case):
        chain, decoder, state, action = case
        pairs = transition_distribution(state, Action.WAIT, chain, decoder)
        for st2, _ in pairs:
            assert st2.r == 0
            assert st2.w == state.w
            assert st2.delta in (0, state.delta + 1)

    @given(model_state_action())
    @settings(max_examples=100, deadline=None)
    def test_transmit_buffer_growth(self, case):
        chain, decoder, state, action = case
        pairs = transition_distribution(state, Action.TRANSMIT, chain, decoder)
        for st2, _ in pairs:
            # the buffer only ever grows by one packet, and only while the
            # source holds still through a failed decode
            assert st2.r in (0, min(state.r + 1, decoder.r_max))
            if st2.r != 0:
                assert st2.s == state.s and st2.w == state.w


class TestEnumerateStates:
    def test_small_enumeration(self):
        chain = SourceChain([[0.5, 0.5], [0.5, 0.5]])
        decoder = DecoderProfile(p_e=0.5, c=0.5, r_max=1)
        space = enumerate_states(chain, decoder, delta_cap=1)
        expected = [
            (1, 1, 0, 0),
            (1, 2, 1, 0),
            (1, 2, 1, 1),
            (2, 1, 1, 0),
            (2, 1, 1, 1),
            (2, 2, 0, 0),
        ]
        assert [st.astuple() for st in space] == expected
        assert len(space) == 6
        for k, st in enumerate(space):
            assert space.index_of(st) == k
            assert space.state_at(k) == st

    def test_index_of_unknown_state(self):
        chain = SourceChain([[0.5, 0.5], [0.5, 0.5]])
        decoder = DecoderProfile(p_e=0.5, c=0.5, r_max=1)
        space = enumerate_states(chain, decoder, delta_cap=1)
        with pytest.raises(ModelError):
            space.index_of(SystemState(1, 2, 2, 0))

    def test_size_formula(self, reference_chain, reference_decoder):
        space = enumerate_states(reference_chain, reference_decoder, delta_cap=7)
        n = reference_chain.n_states
        assert len(space) == n + n * (n - 1) * 7 * (reference_decoder.r_max + 1)


class TestLagrangianCost:
    def test_values(self):
        params = LagrangianCostParams(lam=2.5)
        assert lagrangian_cost(SystemState(1, 2, 4, 0), Action.WAIT, params) == 4.0
        assert lagrangian_cost(SystemState(1, 2, 4, 0), Action.TRANSMIT, params) == 6.5

    def test_rejects_negative_penalty(self):
        with pytest.raises(ModelError):
            LagrangianCostParams(lam=-0.1)


class TestRandomSource:
    def test_diagonal_dominates_and_deterministic(self):
        for seed in (0, 7, 99):
            chain = generate_random_source(6, seed)
            p = chain.transition
            assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
            for i in range(6):
                assert p[i, i] == pytest.approx(p[i].max(), abs=0)
            again = generate_random_source(6, seed)
            assert np.array_equal(p, again.transition)

    def test_rejects_tiny(self):
        with pytest.raises(ModelError):
            generate_random_source(1, 0)


class TestModelFiles:
    def test_round_trip(self, tmp_path, reference_chain, reference_decoder):
        path = tmp_path / "model.yaml"
        save_model(path, reference_chain, reference_decoder)
        chain, decoder = load_model(path)
        assert np.allclose(chain.transition, reference_chain.transition, atol=1e-12)
        assert decoder == reference_decoder

    def test_rejects_bad_row_sum(self, tmp_path):
        path = tmp_path / "model.yaml"
        path.write_text(
            "n_states: 2\ntransition: [[0.7, 0.31], [0.5, 0.5]]\np_e: 0.5\nc: 0.5\nr_max: 2\n"
        )
        with pytest.raises(ModelError, match="normalize"):
            load_model(path)

    def test_normalize_flag(self, tmp_path):
        path = tmp_path / "model.yaml"
        path.write_text(
            "n_states: 2\ntransition: [[7, 3], [5, 5]]\np_e: 0.5\nc: 0.5\nr_max: 2\n"
            "normalize: true\n"
        )
        chain, _ = load_model(path)
        assert np.allclose(chain.transition, [[0.7, 0.3], [0.5, 0.5]], atol=1e-12)

    def test_flat_matrix_accepted(self, tmp_path):
        path = tmp_path / "model.yaml"
        path.write_text(
            "n_states: 2\ntransition: [0.5, 0.5, 0.5, 0.5]\np_e: 0.5\nc: 0.5\nr_max: 1\n"
        )
        chain, decoder = load_model(path)
        assert chain.n_states == 2 and decoder.r_max == 1

    def test_missing_keys(self, tmp_path):
        path = tmp_path / "model.yaml"
        path.write_text("n_states: 2\n")
        with pytest.raises(ModelError, match="missing keys"):
            load_model(path)

    def test_non_numeric_matrix(self, tmp_path):
        path = tmp_path / "model.yaml"
        path.write_text(
            "n_states: 2\ntransition: [[a, b], [c, d]]\np_e: 0.5\nc: 0.5\nr_max: 1\n"
        )
        with pytest.raises(ModelError, match="not numeric"):
            load_model(path)
