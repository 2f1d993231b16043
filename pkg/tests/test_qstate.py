import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catwig.qstate import (
    W_MAX,
    ContractError,
    StateClass,
    StateSpec,
    TruncationError,
    coherent_overlap,
    default_extent,
    fock_amplitudes,
    make_state,
    vacuum,
    wigner_analytic,
    wigner_at,
    wigner_fock_oracle,
)

ALL = list(StateClass)


def fock_vector(state: StateSpec, n_max: int = 200) -> np.ndarray:
    """Plain Fock expansion via explicit factorials (no recurrence shared with the code)."""
    m = np.arange(n_max + 1)
    log_fact = np.array([math.lgamma(k + 1) for k in m])
    out = np.zeros(n_max + 1, dtype=complex)
    for c, z in state.components:
        if z == 0:
            term = np.zeros(n_max + 1, dtype=complex)
            term[0] = 1.0
        else:
            term = np.exp(-abs(z) ** 2 / 2 + m * np.log(z) - 0.5 * log_fact)
        out += c * term
    return out


def test_make_state_coherent():
    s = make_state(StateClass.COHERENT, 4)
    assert len(s.components) == 1
    c, z = s.components[0]
    assert z == 2 + 0j
    assert c == pytest.approx(1.0)


def test_make_state_cat2_coefficients_match_fock_norm():
    s = make_state(StateClass.CAT2, 4)
    expected = 1 / math.sqrt(2 + 2 * math.exp(-8))
    np.testing.assert_allclose(s.coefficients, expected, rtol=1e-14)
    np.testing.assert_allclose(sorted(s.centers.real), [-2, 2])
    # oracle: norm of the unnormalized sum in a truncated Fock basis
    raw = StateSpec(np.ones(2, dtype=complex), s.centers, s.class_id, 4)
    v = fock_vector(raw, 64)
    assert np.vdot(v, v).real == pytest.approx(2 + 2 * math.exp(-8), rel=1e-12)


def test_make_state_cat4_unit_norm():
    s = make_state(StateClass.CAT4, 1)
    np.testing.assert_allclose(s.centers, [1, 1j, -1, -1j], atol=0)
    assert np.allclose(s.coefficients, s.coefficients[0])
    v = fock_vector(s, 64)
    assert abs(np.vdot(v, v).real - 1) < 1e-12


@pytest.mark.parametrize("cls", ALL)
@pytest.mark.parametrize("n", [1, 7, 56, 100])
def test_make_state_structure(cls, n):
    s = make_state(cls, n)
    count = cls.n_components
    assert len(s.components) == count
    alpha = math.sqrt(n)
    expected = alpha * np.exp(2j * np.pi * np.arange(count) / count)
    np.testing.assert_allclose(s.centers, expected, atol=1e-12)
    assert abs(s.norm_squared() - 1) < 1e-12


@pytest.mark.parametrize("bad", [0, 101, -3, 2.5])
def test_make_state_rejects_n(bad):
    with pytest.raises(ValueError):
        make_state(StateClass.CAT2, bad)


def test_make_state_rejects_class():
    with pytest.raises(ValueError):
        make_state(7, 4)
    with pytest.raises(ValueError):
        make_state("cat5", 4)


def test_class_parsing():
    assert StateClass.parse("cat3") is StateClass.CAT3
    assert StateClass.parse(0) is StateClass.COHERENT
    assert StateClass.parse("2") is StateClass.CAT3


def test_coherent_overlap_examples():
    z = 0.3 - 1.7j
    assert coherent_overlap(z, z) == pytest.approx(1.0)
    assert coherent_overlap(0, 0) == 1
    assert coherent_overlap(2, -2) == pytest.approx(math.exp(-8), rel=1e-14)
    # Fock-truncated dot product <b|a>
    a, b = fock_amplitudes(2, 64), fock_amplitudes(-2, 64)
    assert np.vdot(b, a).real == pytest.approx(math.exp(-8), rel=1e-10)


@given(st.complex_numbers(max_magnitude=4), st.complex_numbers(max_magnitude=4))
def test_coherent_overlap_bounded(a, b):
    assert abs(coherent_overlap(a, b)) <= 1 + 1e-12


def test_wigner_coherent_peak():
    s = make_state(StateClass.COHERENT, 9)
    assert wigner_at(s, 3.0) == pytest.approx(2 / math.pi, abs=1e-14)
    assert wigner_fock_oracle(s, 3.0) == pytest.approx(2 / math.pi, abs=1e-10)


@pytest.mark.parametrize("n", [1, 4, 25, 100])
def test_even_cat_origin_is_parity_one(n):
    s = make_state(StateClass.CAT2, n)
    assert wigner_at(s, 0) == pytest.approx(W_MAX, abs=1e-12)


def test_vacuum_values():
    v = vacuum()
    assert wigner_at(v, 0) == pytest.approx(W_MAX, abs=1e-15)
    assert wigner_at(v, 1) == pytest.approx(W_MAX * math.exp(-2), abs=1e-15)
    assert wigner_fock_oracle(v, 0, n_max=32) == pytest.approx(W_MAX, abs=1e-10)


def test_oracle_cat2_origin():
    assert wigner_fock_oracle(make_state(StateClass.CAT2, 4), 0, n_max=64) == pytest.approx(W_MAX, abs=1e-8)


def test_oracle_rejects_small_cutoff():
    s = make_state(StateClass.CAT2, 16)
    with pytest.raises(TruncationError):
        wigner_fock_oracle(s, 0, n_max=20)
    # above the precondition but too small for a far displacement
    with pytest.raises(TruncationError):
        wigner_fock_oracle(s, 6 + 6j, n_max=50)


@pytest.mark.parametrize("cls", ALL)
@pytest.mark.parametrize("n", [1, 4, 9, 16])
def test_analytic_matches_oracle(cls, n):
    rng = np.random.default_rng(100 * int(cls) + n)
    s = make_state(cls, n)
    r = math.sqrt(n) + 3
    pts = r * np.sqrt(rng.random(25)) * np.exp(2j * np.pi * rng.random(25))
    analytic = wigner_at(s, pts)
    oracle = np.array([wigner_fock_oracle(s, b) for b in pts])
    assert np.max(np.abs(analytic - oracle)) < 1e-8


@settings(max_examples=100, deadline=None)
@given(cls=st.sampled_from(ALL), n=st.integers(1, 30),
       x=st.floats(-1, 1), y=st.floats(-1, 1))
def test_oracle_equivalence_property(cls, n, x, y):
    s = make_state(cls, n)
    beta = (math.sqrt(n) + 3) * complex(x, y) / math.sqrt(2)
    assert abs(float(wigner_at(s, beta)) - wigner_fock_oracle(s, beta)) < 1e-8


def test_unnormalized_state_rejected():
    s = make_state(StateClass.CAT2, 4)
    bad = StateSpec(s.coefficients * 2, s.centers, s.class_id, 4)
    with pytest.raises(ContractError):
        wigner_at(bad, 0)


def test_grid_layout():
    s = make_state(StateClass.COHERENT, 4)
    g = wigner_analytic(s, 6.0, 61)
    # rows run Im(beta) descending, columns Re(beta) ascending; peak at beta = 2
    row, col = np.unravel_index(np.argmax(g.values), g.values.shape)
    assert g.axis[col] == pytest.approx(2.0)
    assert g.axis[::-1][row] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        wigner_analytic(s, 6.0, 1)
    with pytest.raises(ValueError):
        wigner_analytic(s, 0.0, 10)


@pytest.mark.parametrize("cls", ALL)
@pytest.mark.parametrize("n", [1, 4, 9, 16, 25])
def test_bounded_and_normalized(cls, n):
    g = wigner_analytic(make_state(cls, n), default_extent(n), 256)
    assert np.all(np.abs(g.values) <= W_MAX + 1e-9)
    assert abs(g.integral() - 1) < 1e-2


@pytest.mark.parametrize("cls", [StateClass.CAT2, StateClass.CAT3, StateClass.CAT4])
def test_rotational_symmetry(cls):
    s = make_state(cls, 9)
    rng = np.random.default_rng(int(cls))
    pts = 5 * (rng.random(200) - 0.5) + 5j * (rng.random(200) - 0.5)
    turn = np.exp(2j * np.pi / cls.n_components)
    assert np.max(np.abs(wigner_at(s, pts * turn) - wigner_at(s, pts))) < 1e-10


@pytest.mark.parametrize("cls", ALL)
def test_reflection_symmetry(cls):
    s = make_state(cls, 16)
    rng = np.random.default_rng(7)
    pts = 8 * (rng.random(200) - 0.5) + 8j * (rng.random(200) - 0.5)
    assert np.max(np.abs(wigner_at(s, np.conj(pts)) - wigner_at(s, pts))) < 1e-10


def test_coherent_closed_form_everywhere():
    s = make_state(StateClass.COHERENT, 5)
    g = wigner_analytic(s, default_extent(5), 128)
    beta = g.axis[None, :] + 1j * g.axis[::-1, None]
    expected = W_MAX * np.exp(-2 * np.abs(beta - math.sqrt(5)) ** 2)
    assert np.max(np.abs(g.values - expected)) < 1e-10
