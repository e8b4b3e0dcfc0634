import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privlens.simplex import (DimensionMismatch, FunctionSpec, NType, channel,
                              channel_from_json, channel_to_json, divergence_var_lower_bound,
                              entropy, enumerate_ntypes, kl_divergence, kl_divergence_rows,
                              local_uniformity_bound, locally_uniform_pmf, ntype_array,
                              ntype_mass, ntype_masses, pmf, push_forward, variational_distance)


def simplex_points(dim):
    return st.lists(st.floats(0.0, 1.0), min_size=dim, max_size=dim).filter(
        lambda w: sum(w) > 1e-6).map(lambda w: np.asarray(w) / sum(w))


@st.composite
def pmf_pairs(draw):
    d = draw(st.integers(2, 6))
    return draw(simplex_points(d)), draw(simplex_points(d))


@st.composite
def specs(draw, r_max=8):
    r = draw(st.integers(2, r_max))
    labels = draw(st.lists(st.integers(0, r - 1), min_size=r, max_size=r))
    groups = {}
    for x, lab in enumerate(labels):
        groups.setdefault(lab, []).append(x)
    atoms = list(groups.values())
    if len(atoms) < 2:
        atoms = [atoms[0][:1], atoms[0][1:]]
    return FunctionSpec.from_atoms(atoms)


class TestValidation:
    def test_pmf_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            pmf([0.5, 0.4])

    def test_pmf_rejects_negative(self):
        with pytest.raises(ValueError):
            pmf([1.5, -0.5])

    def test_pmf_is_read_only(self):
        p = pmf([0.25, 0.75])
        with pytest.raises(ValueError):
            p[0] = 1.0

    def test_channel_reports_bad_rows(self):
        with pytest.raises(ValueError, match=r'\[1\]'):
            channel([[1.0, 0.0], [0.3, 0.3]])

    def test_channel_json_round_trip_is_exact(self):
        w = channel([[0.1, 0.2, 0.7], [0.123456789012345, 0.5, 0.376543210987655]])
        again = channel_from_json(channel_to_json(w))
        assert np.array_equal(w, again)


class TestFunctionSpec:
    def test_sorts_atoms_by_size_and_keeps_order(self):
        spec = FunctionSpec.from_atoms([[0], [1, 2, 3], [4, 5]])
        assert spec.sizes == (3, 2, 1)
        assert spec.order == (1, 2, 0)
        assert spec.original_atoms == [(0,), (1, 2, 3), (4, 5)]

    def test_ties_keep_input_order(self):
        spec = FunctionSpec.from_atoms([[2, 3], [0, 1]])
        assert spec.atoms == ((2, 3), (0, 1))

    def test_rejects_overlap_and_gaps(self):
        with pytest.raises(ValueError):
            FunctionSpec.from_atoms([[0, 1], [1, 2]])
        with pytest.raises(ValueError):
            FunctionSpec.from_atoms([[0], [2]], r=3)

    def test_rejects_single_atom(self):
        with pytest.raises(ValueError):
            FunctionSpec.from_atoms([[0, 1, 2]])

    def test_json_round_trip(self):
        spec = FunctionSpec.from_atoms([[4], [0, 1, 2], [3]])
        assert FunctionSpec.from_json(spec.to_json()) == spec

    def test_labels(self):
        spec = FunctionSpec.from_sizes((3, 2))
        assert spec.labels.tolist() == [0, 0, 0, 1, 1]


class TestDivergence:
    def test_identical(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_point_mass_against_two_thirds(self):
        assert kl_divergence([1, 0], [2 / 3, 1 / 3]) == pytest.approx(math.log2(1.5), abs=1e-15)

    def test_disjoint_support_is_infinite(self):
        assert kl_divergence([1, 0], [0, 1]) == math.inf

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            kl_divergence([1, 0], [0.5, 0.25, 0.25])

    def test_rows_match_scalar(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(4))
        qs = rng.dirichlet(np.ones(4), size=5)
        qs[0, 1] = 0
        qs[0] /= qs[0].sum()
        got = kl_divergence_rows(p, qs)
        want = [kl_divergence(p, q) for q in qs]
        assert got[0] == math.inf
        np.testing.assert_allclose(got[1:], want[1:], rtol=1e-12)

    @given(pmf_pairs())
    def test_nonnegative_and_zero_on_diagonal(self, pair):
        p, q = pair
        assert kl_divergence(p, q) >= 0
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)

    @given(pmf_pairs())
    def test_pinsker_in_bits(self, pair):
        p, q = pair
        assert variational_distance(p, q) <= math.sqrt(2 * math.log(2) * kl_divergence(p, q)) + 1e-12


class TestVariationalDistance:
    def test_maximal(self):
        assert variational_distance([1, 0], [0, 1]) == 2.0

    def test_self(self):
        assert variational_distance([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_l1_convention(self):
        assert variational_distance([0.75, 0.25], [0.5, 0.5]) == 0.5


class TestLocalUniformity:
    def test_point_mass_is_tight(self):
        spec = FunctionSpec.from_sizes((3, 2))
        p = np.array([1.0, 0, 0, 0, 0])
        bound, tight = local_uniformity_bound(p, spec, push_forward(p, spec))
        assert bound == pytest.approx(math.log2(3), abs=1e-15)
        assert tight

    def test_uniform_on_atom_is_not_tight(self):
        spec = FunctionSpec.from_sizes((2, 1))
        bound, tight = local_uniformity_bound([0.5, 0.5, 0.0], spec, [1.0, 0.0])
        assert bound == pytest.approx(1.0, abs=1e-15)
        assert not tight

    def test_locally_uniform_pmf_itself(self):
        spec = FunctionSpec.from_sizes((2, 1))
        beta = np.array([0.6, 0.4])
        p = locally_uniform_pmf(beta, spec)
        bound, tight = local_uniformity_bound(p, spec, beta)
        assert kl_divergence(p, p) == 0.0 <= bound
        assert not tight
        singles = FunctionSpec.identity(3)
        assert local_uniformity_bound([0.2, 0.3, 0.5], singles, [0.2, 0.3, 0.5]) == (0.0, True)

    @settings(max_examples=200)
    @given(specs(), st.data())
    def test_bound_holds_and_tight_iff_sparse(self, spec, data):
        p = data.draw(simplex_points(spec.r))
        beta = data.draw(simplex_points(spec.k).filter(lambda b: np.all(b > 1e-3)))
        bound, tight = local_uniformity_bound(p, spec, beta)
        actual = kl_divergence(p, locally_uniform_pmf(beta, spec))
        assert actual <= bound + 1e-12
        if all(np.count_nonzero(p[list(a)]) <= 1 for a in spec.atoms):
            assert tight


class TestDivergenceVarLowerBound:
    def test_equal_reference(self):
        p, q = [0.2, 0.8], [0.5, 0.5]
        assert divergence_var_lower_bound(p, q, q) == kl_divergence(p, q)

    def test_worked_example(self):
        got = divergence_var_lower_bound([1, 0], [0.6, 0.4], [0.5, 0.5])
        assert got == pytest.approx(0.6, abs=1e-15)
        assert kl_divergence([1, 0], [0.6, 0.4]) >= got

    def test_support_chain_violation(self):
        with pytest.raises(ValueError):
            divergence_var_lower_bound([0.5, 0.5], [1.0, 0.0], [0.5, 0.5])

    @given(st.integers(2, 6).flatmap(lambda d: st.tuples(simplex_points(d), simplex_points(d),
                                                       simplex_points(d))))
    def test_never_exceeds_divergence(self, triple):
        p, q, q0 = triple
        q0 = (q0 + 1e-3) / (1 + q0.size * 1e-3)
        p = np.where(q > 0, p, 0.0)
        if p.sum() == 0:
            p = q.copy()
        p = p / p.sum()
        assert divergence_var_lower_bound(p, q, q0) <= kl_divergence(p, q) + 1e-12


class TestTypes:
    def test_small_enumerations(self):
        assert [t.counts for t in enumerate_ntypes(1, 2)] == [(1, 0), (0, 1)]
        assert [t.counts for t in enumerate_ntypes(2, 2)] == [(2, 0), (1, 1), (0, 2)]
        assert len(enumerate_ntypes(4, 3)) == 15

    @pytest.mark.parametrize('n,k', [(1, 3), (5, 2), (6, 4), (3, 5)])
    def test_matches_itertools_oracle(self, n, k):
        oracle = sorted((c for c in itertools.product(range(n + 1), repeat=k) if sum(c) == n),
                        reverse=True)
        assert [tuple(r) for r in ntype_array(n, k)] == oracle
        assert len(oracle) == math.comb(n + k - 1, k - 1)

    def test_large_n_is_iterative(self):
        assert len(ntype_array(200, 3)) == math.comb(202, 2)

    def test_masses(self):
        assert ntype_mass([1, 0], NType((5, 0))) == 1.0
        assert ntype_mass([0.5, 0.5], NType((1, 1))) == pytest.approx(0.5, abs=1e-15)

    @given(simplex_points(3))
    def test_masses_sum_to_one(self, alpha):
        assert math.fsum(ntype_masses(alpha, ntype_array(4, 3))) == pytest.approx(1.0, abs=1e-12)

    def test_ntype_invariants(self):
        t = NType((3, 1))
        assert t.n == 4 and t.dim == 2
        np.testing.assert_allclose(t.as_pmf(), [0.75, 0.25])
        with pytest.raises(ValueError):
            NType((0, 0))


class TestPushForward:
    def test_examples(self):
        spec = FunctionSpec.from_sizes((3, 2))
        np.testing.assert_allclose(push_forward(np.full(5, 0.2), spec), [0.6, 0.4])
        np.testing.assert_array_equal(push_forward([1, 0, 0, 0, 0], spec), [1, 0])
        p = np.array([0.1, 0.2, 0.7])
        np.testing.assert_array_equal(push_forward(p, FunctionSpec.identity(3)), p)

    def test_entropy(self):
        assert entropy([0.5, 0.5]) == 1.0
        assert entropy([1.0, 0.0]) == 0.0
