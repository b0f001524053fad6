"""Exact references, envelopes, and the remainder recursion."""

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from branchpcr import harmonic
from branchpcr.moments import (
    MutationLaw,
    Rn_recursion_bound,
    exact_Vn_Vpn,
    exact_sample_moments,
    first_moment_envelope,
    infinite_population_moments,
    moment_envelope,
    poisson_law,
    rn_upper_bound,
    size_law,
    theorem_k_bound,
    variance_envelope,
)
from branchpcr.schedule import build_schedule, derived_sequences
from branchpcr.simulator import enumerate_tiny

REF_LAMBDAS = [0.872] * 20 + [0.743] * 5 + [0.146] * 5

lam_floats = st.one_of(
    st.just(0.0), st.just(1.0), st.floats(min_value=1e-6, max_value=1.0)
)


def seqs_for(lams):
    return derived_sequences(build_schedule(lams), len(lams))


# ----- mutation laws -----

def test_mutation_law_validation():
    with pytest.raises(ValueError):
        MutationLaw(mu=-0.1, nu=0.1)
    with pytest.raises(ValueError):
        MutationLaw(mu=0.1, nu=-0.1)
    with pytest.raises(ValueError):
        MutationLaw(mu=0.1, nu=0.2, poisson=True)
    law = poisson_law(0.05)
    assert law.nu == 0.05 and law.poisson and law.integer_valued
    assert law.second_moment == pytest.approx(0.05 + 0.0025)


def test_two_point_support():
    law = MutationLaw(mu=0.1, nu=0.04)
    a, p = law.two_point_support()
    assert a == pytest.approx(0.05 / 0.1)
    assert p == pytest.approx(0.01 / 0.05)
    # moments of p delta_a match (mu, nu) exactly
    assert p * a == pytest.approx(law.mu)
    assert p * a * a - (p * a) ** 2 == pytest.approx(law.nu)
    assert MutationLaw(mu=0.0, nu=0.0).two_point_support() == (0.0, 0.0)
    with pytest.raises(ValueError):
        MutationLaw(mu=0.0, nu=0.1).two_point_support()


# ----- infinite-population limits -----

def test_infinite_population_reference_value():
    seqs = seqs_for(REF_LAMBDAS)
    Et, Vt = infinite_population_moments(seqs, poisson_law(0.05024), 30, 28)
    assert Et == pytest.approx(0.60716, abs=5e-5)
    assert Vt == pytest.approx((0.05024 * seqs.W[30] + 0.05024**2 * seqs.Wp[30]) / 28)
    assert infinite_population_moments(seqs, poisson_law(0.0), 30, 28) == (0.0, 0.0)
    assert infinite_population_moments(seqs, poisson_law(0.05), 0, 28) == (0.0, 0.0)
    with pytest.raises(ValueError):
        infinite_population_moments(seqs, poisson_law(0.05), 30, 0)


# ----- exact size law -----

def test_size_law_one_cycle():
    law = size_law(build_schedule([0.5]), 1, 1)
    np.testing.assert_array_equal(law.sizes, [1, 2])
    np.testing.assert_allclose(law.probs, [0.5, 0.5])


def test_size_law_two_cycles():
    # conditioning on the first cycle: 1/2 (1/2, 1/2, 0, 0) + 1/2 (0, 1/4, 1/2, 1/4)
    law = size_law(build_schedule([0.5, 0.5]), 1, 2)
    np.testing.assert_array_equal(law.sizes, [1, 2, 3, 4])
    np.testing.assert_allclose(law.probs, [0.25, 0.375, 0.25, 0.125], atol=1e-15)
    assert law.mean() == pytest.approx(2.25)


def test_size_law_full_efficiency_point_mass():
    law = size_law(build_schedule([1.0] * 5), 3, 5)
    idx = np.argmax(law.probs)
    assert law.sizes[idx] == 3 * 2**5
    assert law.probs[idx] == pytest.approx(1.0)


def test_size_law_cap():
    with pytest.raises(ValueError):
        size_law(build_schedule([0.5] * 3), 1, 3, cap=7)
    with pytest.raises(ValueError):
        size_law(build_schedule([0.5]), 0, 1)


def test_size_law_mean_matches_growth():
    lams = [0.3, 0.9, 0.5, 0.7]
    seqs = seqs_for(lams)
    law = size_law(build_schedule(lams), 2, 4)
    assert law.mean() == pytest.approx(2.0 / seqs.gamma[4], rel=1e-12)
    with pytest.raises(ValueError):
        law.harmonic_moment(-2.0)  # shift reaches the support


# ----- exact correction sums -----

def test_exact_correction_single_cycle():
    A_seq, Vn, Vpn = exact_Vn_Vpn(build_schedule([0.5]), 1, 1)
    assert A_seq[0] == pytest.approx(1.0 / 12.0, abs=1e-15)
    assert Vn == pytest.approx(1.0 / 12.0, abs=1e-15)


def test_exact_correction_full_efficiency():
    A_seq, Vn, Vpn = exact_Vn_Vpn(build_schedule([1.0] * 4), 2, 4)
    np.testing.assert_allclose(A_seq, 0.0, atol=1e-15)
    assert Vn == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("S0", [2, 3, 5])
def test_correction_sum_sandwich(S0):
    lams = [0.5] * 8
    seqs = seqs_for(lams)
    _, Vn, _ = exact_Vn_Vpn(build_schedule(lams), S0, 8)
    assert seqs.v[8] / (S0 + 1) <= Vn <= seqs.v[8] / (S0 - 1)


def test_expectation_reading_dominates_literal():
    sched = build_schedule([0.3, 0.8, 0.5, 0.6])
    for S0 in (1, 2, 5):
        _, _, lit = exact_Vn_Vpn(sched, S0, 4)
        _, _, exp = exact_Vn_Vpn(sched, S0, 4, expectation_reading=True)
        assert exp >= lit - 1e-15


def test_z_ordering():
    # nu V + mu^2 V' <= (nu + mu^2) V since each A'_k <= A_k
    sched = build_schedule([0.4, 0.7, 0.2, 0.9, 0.5])
    law = poisson_law(0.08)
    for S0 in (1, 2, 4):
        _, Vn, Vpn = exact_Vn_Vpn(sched, S0, 5)
        assert Vpn <= Vn + 1e-15
        assert law.nu * Vn + law.mu**2 * Vpn <= law.second_moment * Vn + 1e-15


@pytest.mark.parametrize("S0,lams", [
    (1, [0.3] * 8),
    (2, [0.9] * 6),
    (3, list(np.linspace(0.1, 0.95, 10))),
    (5, [0.5, 1.0, 0.25, 0.8]),
])
def test_per_cycle_sandwich(S0, lams):
    n = len(lams)
    seqs = seqs_for(lams)
    A_seq, _, _ = exact_Vn_Vpn(build_schedule(lams), S0, n)
    tol = 1e-13
    for k in range(1, n + 1):
        lam = seqs.lam[k - 1]
        alpha = seqs.alpha[k - 1]
        sharp = seqs.gamma[k - 1] * alpha * (1 - lam) / (1 + lam) ** 2
        assert A_seq[k - 1] >= sharp / (S0 + 1) - tol
        assert A_seq[k - 1] <= seqs.gamma_i[3][k - 1] * alpha * (1 - lam) / (S0 + 1) + tol
        if S0 >= 2:
            assert A_seq[k - 1] <= sharp / (S0 - 1) + tol


# ----- exact joint dynamic program -----

def test_exact_moments_internal_relations():
    dp = exact_sample_moments(build_schedule([0.5] * 5), poisson_law(0.06), 2, 5, 4)
    assert dp.Vt == pytest.approx(dp.D_eta / 4 + (1 - 0.25) * dp.Rn, rel=1e-14)
    assert dp.D_zeta_mean == pytest.approx(dp.D_eta - dp.Rn, rel=1e-12)
    assert dp.p.sum() == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        exact_sample_moments(build_schedule([0.5]), poisson_law(0.06), 2, 1, 0)
    with pytest.raises(ValueError):
        exact_sample_moments(build_schedule([0.5]), poisson_law(0.06), 0, 1, 1)
    with pytest.raises(ValueError):
        exact_sample_moments(build_schedule([0.5] * 4), poisson_law(0.06), 1, 4, 1, cap=8)


def test_exact_first_moment_identity():
    # E[M(zeta_n)] = mu (W_n - V_n) with the exact correction sum
    for S0, lams in ((1, [0.5] * 6), (3, [0.2, 0.9, 0.6, 0.4])):
        n = len(lams)
        sched = build_schedule(lams)
        seqs = seqs_for(lams)
        law = poisson_law(0.07)
        _, Vn, _ = exact_Vn_Vpn(sched, S0, n)
        dp = exact_sample_moments(sched, law, S0, n, 1)
        assert dp.M_eta == pytest.approx(law.mu * (seqs.W[n] - Vn), rel=1e-12)
        fme = first_moment_envelope(seqs, law, S0, n, exact_Vn=Vn)
        assert fme.M_eta_exact == pytest.approx(dp.M_eta, rel=1e-12)


@pytest.mark.parametrize("S0", [1, 2])
@pytest.mark.parametrize("law", [poisson_law(0.05), MutationLaw(mu=0.1, nu=0.04)])
def test_dynamic_program_vs_enumeration(S0, law):
    for lams in ([0.25, 0.5, 0.9], [0.5, 0.5, 0.5, 0.5], [1.0, 0.5]):
        n = len(lams)
        sched = build_schedule(lams)
        for ell in (1, 3):
            dp = exact_sample_moments(sched, law, S0, n, ell)
            tiny = enumerate_tiny(sched, law, S0, n, ell)
            for f in ("Et", "Vt", "Rn", "M_eta", "M2_eta", "D_eta"):
                assert getattr(dp, f) == pytest.approx(
                    getattr(tiny, f), rel=1e-12, abs=1e-14
                ), (f, S0, lams, ell)


def test_single_founder_single_cycle_mean():
    dp = exact_sample_moments(build_schedule([0.5]), poisson_law(0.05), 1, 1, 1)
    # half the time nothing happens; otherwise the sampled particle carries
    # the fresh increment with probability 1/2
    assert dp.Et == pytest.approx(0.05 / 4)


# ----- envelopes -----

def test_first_moment_envelope_zero_mean():
    seqs = seqs_for([0.5] * 4)
    fme = first_moment_envelope(seqs, poisson_law(0.0), 2, 4)
    assert fme.Et_lo == 0.0 and fme.Et_hi == 0.0


def test_first_moment_envelope_candidates():
    lams = [0.4, 0.8, 0.6]
    seqs = seqs_for(lams)
    for S0 in (1, 2, 5):
        fme = first_moment_envelope(seqs, poisson_law(0.1), S0, 3)
        cands = [seqs.vpp[3] / (S0 + 1), seqs.vp[3] / S0,
                 1.5 if S0 == 1 else 1.0 / (S0 - 1)]
        if S0 >= 2:
            cands.append(seqs.v[3] / (S0 - 1))
        assert fme.Vn_hi == pytest.approx(min(cands), rel=1e-14)
        assert fme.TV_hi == fme.Vn_hi
        assert fme.Vn_lo == pytest.approx(seqs.v[3] / (S0 + 1), rel=1e-14)


@pytest.mark.parametrize("S0,n,ell", [(2, 6, 3), (1, 5, 1), (3, 6, 2), (2, 6, 10)])
def test_envelopes_contain_exact_values(S0, n, ell):
    lams = [0.5] * n
    sched = build_schedule(lams)
    seqs = seqs_for(lams)
    law = poisson_law(0.08)
    dp = exact_sample_moments(sched, law, S0, n, ell)
    fme = first_moment_envelope(seqs, law, S0, n)
    ve = variance_envelope(seqs, law, S0, n, ell, exact=dp)
    assert fme.Et_lo - 1e-12 <= dp.Et <= fme.Et_hi + 1e-12
    assert ve.Vt_lo - 1e-12 <= dp.Vt <= ve.Vt_hi + 1e-12
    assert dp.Rn <= ve.Rn_hi + 1e-12
    assert ve.Vt_exact == dp.Vt
    _, Vn, _ = exact_Vn_Vpn(sched, S0, n)
    assert fme.Vn_lo - 1e-12 <= Vn <= fme.Vn_hi + 1e-12


def test_sample_mean_orderings():
    # one draw sits below the infinite-population variance, three or more above
    sched = build_schedule([0.5] * 6)
    seqs = seqs_for([0.5] * 6)
    law = poisson_law(0.08)
    Et_star, _ = infinite_population_moments(seqs, law, 6, 1)
    for ell in (1, 3, 10):
        dp = exact_sample_moments(sched, law, 2, 6, ell)
        _, Vt_star = infinite_population_moments(seqs, law, 6, ell)
        assert dp.Et <= Et_star + 1e-15
        if ell == 1:
            assert dp.Vt < Vt_star
        else:
            assert dp.Vt > Vt_star


def test_variance_envelope_branches():
    seqs = seqs_for([0.5] * 6)
    law = poisson_law(0.08)
    v1 = variance_envelope(seqs, law, 2, 6, 1)
    v2 = variance_envelope(seqs, law, 2, 6, 2)
    v3 = variance_envelope(seqs, law, 2, 6, 3)
    _, star1 = infinite_population_moments(seqs, law, 6, 1)
    assert v1.Vt_hi == pytest.approx(star1)
    assert v3.Vt_lo == pytest.approx(star1 / 3)
    # the two-draw bracket is the union of the one-sided ones
    assert v2.Vt_lo <= min(v1.Vt_lo, v3.Vt_lo / 1.5) + 1e-12
    assert v2.Vt_hi >= v3.Vt_hi * (0.5 / (2 / 3)) - 1e-12
    assert v1.Vt_lo >= 0.0
    with pytest.raises(ValueError):
        variance_envelope(seqs, law, 2, 6, 0)


def test_envelope_growth_regimes():
    # summable efficiencies keep the envelopes bounded; a constant schedule
    # grows them without bound
    law = poisson_law(0.05)
    hi_sum, hi_const = [], []
    for n in (10, 40, 80):
        sum_seqs = seqs_for([2.0**-k for k in range(1, n + 1)])
        const_seqs = seqs_for([0.3] * n)
        hi_sum.append(variance_envelope(sum_seqs, law, 2, n, 5).Vt_hi)
        hi_const.append(variance_envelope(const_seqs, law, 2, n, 5).Vt_hi)
    assert hi_sum[-1] <= hi_sum[0] * 1.01
    assert hi_const[-1] > 2 * hi_const[0]


def test_moment_envelope_assembly():
    seqs = seqs_for([0.5] * 12)
    law = poisson_law(0.05)
    me = moment_envelope(seqs, law, 2, 12, 5)
    assert me.Zn_hi == pytest.approx(law.second_moment * me.Vn_hi)
    assert me.Et_lo <= me.Et_hi
    assert me.Vt_lo <= me.Vt_hi
    assert me.TV_hi == me.Vn_hi


# ----- remainder bounds -----

def test_remainder_closed_form_candidates():
    seqs = seqs_for([0.5] * 10)
    law = poisson_law(0.05)
    for S0 in (2, 5):
        uniform = 2.0 * law.second_moment / (S0 - 1)
        assert rn_upper_bound(seqs, law, S0, 10) <= uniform + 1e-15
    with pytest.raises(ValueError):
        rn_upper_bound(seqs, law, 0, 10)


@pytest.mark.parametrize("S0", [1, 2, 3, 10])
def test_remainder_recursion_telescopes(S0):
    law = poisson_law(0.05)
    for lams in ([0.5] * 10, [0.25, 0.9, 0.5, 0.1, 0.75],
                 list(np.linspace(0.05, 0.95, 12)), [1.0] * 4, [0.5, 1.0, 0.25]):
        n = len(lams)
        seqs = seqs_for(lams)
        R = Rn_recursion_bound(seqs, law, S0, n)
        assert len(R) == n + 1 and R[0] == 0.0
        assert np.all(np.diff(R) >= -1e-15)
        if S0 >= 2:
            closed = (law.nu * seqs.u[n] + law.mu**2 * seqs.up[n]
                      + law.second_moment * seqs.upp[n]) / (S0 - 1)
        else:
            closed = (law.nu * seqs.u_wide[n] / S0
                      + law.mu**2 * seqs.up_wide[n] / (S0 + 1)
                      + law.second_moment * seqs.upp_wide[n] / S0)
        assert R[-1] == pytest.approx(closed, rel=1e-12, abs=1e-15)


def test_remainder_recursion_zero_law():
    seqs = seqs_for([0.5] * 5)
    R = Rn_recursion_bound(seqs, MutationLaw(mu=0.0, nu=0.0), 2, 5)
    np.testing.assert_array_equal(R, 0.0)


@pytest.mark.parametrize("lam", [0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
def test_remainder_recursion_under_uniform(lam):
    law = poisson_law(0.05)
    for S0 in (2, 3, 10):
        seqs = seqs_for([lam] * 30)
        R = Rn_recursion_bound(seqs, law, S0, 30)[-1]
        assert R <= 2.0 * law.second_moment / (S0 - 1) + 1e-15


def test_remainder_dominates_exact():
    law = poisson_law(0.07)
    for S0, lams in ((1, [0.5] * 6), (2, [0.3, 0.8, 0.5, 0.9]), (4, [0.6] * 5)):
        n = len(lams)
        dp = exact_sample_moments(build_schedule(lams), law, S0, n, 1)
        R = Rn_recursion_bound(seqs_for(lams), law, S0, n)
        assert dp.Rn <= R[-1] + 1e-13


def test_one_step_remainder_identity():
    # stepping the exact program one cycle matches the coefficient identity
    # R_{n+1} = R_n + E[D(zeta_n) B''(S_n)] + nu E[B(S_n)]
    #           + mu^2 (E[B2(S_n)] - E[1-H(S_n)]^2) + 2 mu Cov(M(zeta_n), 1-H(S_n))
    def residual(lams, law, S0, n):
        sched = build_schedule(lams)
        dpn = exact_sample_moments(sched, law, S0, n, 1)
        dpn1 = exact_sample_moments(sched, law, S0, n + 1, 1)
        L = lams[n]
        fams = {int(s): harmonic.B_family(int(s), L) for s in dpn.sizes}
        EB = sum(dpn.p[i] * fams[int(s)].B for i, s in enumerate(dpn.sizes))
        EB2 = sum(dpn.p[i] * fams[int(s)].B2 for i, s in enumerate(dpn.sizes))
        E1H = sum(dpn.p[i] * (1 - fams[int(s)].H) for i, s in enumerate(dpn.sizes))
        EDBpp = sum(
            fams[int(s)].Bpp * (dpn.q[i] - dpn.m2[i]) for i, s in enumerate(dpn.sizes)
        )
        cov = sum(
            dpn.m1[i] * (1 - fams[int(s)].H) for i, s in enumerate(dpn.sizes)
        ) - dpn.M_eta * E1H
        rhs = (dpn.Rn + EDBpp + law.nu * EB
               + law.mu**2 * (EB2 - E1H**2) + 2 * law.mu * cov)
        return dpn1.Rn - rhs

    for S0 in (1, 2, 3):
        for lams in ([0.5] * 5, [0.25, 0.9, 0.5, 0.1, 0.75], [1.0, 0.5, 0.3, 0.8, 0.2]):
            for law in (poisson_law(0.07), MutationLaw(mu=0.1, nu=0.04)):
                for n in (1, 2, 4):
                    assert abs(residual(lams, law, S0, n)) < 1e-10, (S0, lams, n)


def test_theorem_k_bound_values():
    assert theorem_k_bound(2, 1.0, 8, 4) == pytest.approx(4.0)
    assert theorem_k_bound(5, 0.0, 3, 2) == 0.0
    with pytest.raises(ValueError):
        theorem_k_bound(2, -1.0, 3, 2)
    with pytest.raises(ValueError):
        theorem_k_bound(2, 1.0, 0, 2)


@given(
    st.lists(lam_floats, min_size=1, max_size=8),
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=5),
)
@settings(max_examples=40, deadline=None)
def test_envelope_containment_property(lams, S0, ell):
    sched = build_schedule(lams)
    n = len(lams)
    seqs = seqs_for(lams)
    law = MutationLaw(mu=0.09, nu=0.02)
    dp = exact_sample_moments(sched, law, S0, n, ell)
    fme = first_moment_envelope(seqs, law, S0, n)
    ve = variance_envelope(seqs, law, S0, n, ell)
    assert fme.Et_lo - 1e-10 <= dp.Et <= fme.Et_hi + 1e-10
    assert ve.Vt_lo - 1e-10 <= dp.Vt <= ve.Vt_hi + 1e-10
    assert dp.Rn <= ve.Rn_hi + 1e-10
