import itertools

import numpy as np
import pytest

from hyperpe.chaos import (
    GeneratorParams,
    QuadraticForm,
    b_mode_as_form,
    carre_du_champ,
    evaluate_form,
    evaluate_form_array,
    expectation,
    expectation_product,
    expected_carre,
    expected_carre_increment,
    generator_apply,
    h_poisson,
    poisson_residual,
)
from hyperpe.measure import sample_mu, sample_mu_array
from hyperpe.nonlinearity import b_mode
from hyperpe.rng import derive_seed
from hyperpe.spectral import ModeIndex, disk_mask, make_field


def modes_of(m):
    return [ModeIndex(int(a), int(b)) for a, b in np.argwhere(disk_mask(m))]


def random_form(m, rng, n_terms=6, constant=True):
    modes = modes_of(m)
    ent = {}
    for _ in range(n_terms):
        a, b = rng.choice(len(modes), 2)
        ent[(modes[a], modes[b])] = rng.normal()
    return QuadraticForm(ent, rng.normal() if constant else 0.0, m)


class TestForms:
    def test_square(self):
        qf = QuadraticForm({((1, 1), (1, 1)): 1.0}, 0.0, 2)
        assert evaluate_form(qf, make_field(2, {(1, 1): 3.0})) == 9.0

    def test_constant(self):
        qf = QuadraticForm({}, 2.5, 4)
        assert evaluate_form(qf, sample_mu(4, 0)) == 2.5

    def test_polynomial_oracle(self):
        rng = np.random.default_rng(1)
        m = 3
        for _ in range(10):
            qf = random_form(m, rng)
            w = sample_mu(m, int(rng.integers(1 << 30)))
            ref = qf.constant
            for (a, b), q in qf.entries.items():
                ref += q * w[a] * w[b] * (1 if a == b else 2)
            assert evaluate_form(qf, w) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_unordered_keys(self):
        a = QuadraticForm({((1, 2), (2, 1)): 1.0}, 0.0, 3)
        b = QuadraticForm({((2, 1), (1, 2)): 1.0}, 0.0, 3)
        assert a == b

    def test_cutoff_checks(self):
        with pytest.raises(ValueError):
            QuadraticForm({((3, 3), (1, 1)): 1.0}, 0.0, 4)
        qf = QuadraticForm({((3, 3), (1, 1)): 1.0}, 0.0, 5)
        with pytest.raises(ValueError):
            evaluate_form(qf, sample_mu(4, 0))

    def test_array_evaluation(self):
        qf = random_form(5, np.random.default_rng(2))
        arr = sample_mu_array(7, [derive_seed(0, r) for r in range(5)])
        out = evaluate_form_array(qf, arr)
        from hyperpe.spectral import SpectralField

        for r in range(5):
            assert out[r] == pytest.approx(evaluate_form(qf, SpectralField(7, arr[r])), rel=1e-14)


class TestGenerator:
    theta = 2.5

    def test_diagonal(self):
        F = QuadraticForm({((1, 1), (1, 1)): 1.0}, 0.0, 2)
        LF = generator_apply(F, self.theta)
        lam = 2.0**self.theta
        assert LF.entries == {((1, 1), (1, 1)): pytest.approx(-2 * lam)}
        assert LF.constant == pytest.approx(2 * lam)

    def test_off_diagonal_eigenfunction(self):
        F = QuadraticForm({((1, 1), (1, 2)): 0.5}, 0.0, 3)
        LF = generator_apply(F, self.theta)
        assert LF.entries[((1, 1), (1, 2))] == pytest.approx(-(2**self.theta + 5**self.theta) * 0.5)

    def test_mean_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            assert expectation(generator_apply(random_form(6, rng), self.theta)) == pytest.approx(0.0, abs=1e-9)

    def test_matches_finite_difference_generator(self):
        # L F = sum lam_i (-w_i d_i F + d_i^2 F) evaluated directly
        rng = np.random.default_rng(4)
        F = random_form(4, rng)
        modes, Q = F.matrix(modes_of(4))
        lam = np.array([(a.k1**2 + a.k2**2) ** self.theta for a in modes])
        w = sample_mu(4, 9)
        x = np.array([w[a] for a in modes])
        grad = 2 * Q @ x
        direct = np.sum(lam * (-x * grad + 2 * np.diag(Q)))
        assert evaluate_form(generator_apply(F, self.theta), w) == pytest.approx(direct, rel=1e-12)

    def test_params(self):
        with pytest.raises(ValueError):
            generator_apply(QuadraticForm({}, 0.0, 2), GeneratorParams(0.0))


class TestCarre:
    theta = 2.5

    def test_square(self):
        F = QuadraticForm({((1, 1), (1, 1)): 1.0}, 0.0, 2)
        E = carre_du_champ(F, F, self.theta)
        assert E.entries == {((1, 1), (1, 1)): pytest.approx(4 * 2**self.theta)}
        assert E.constant == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        F, G = random_form(5, rng), random_form(5, rng)
        assert carre_du_champ(F, G, self.theta) == carre_du_champ(G, F, self.theta)

    def test_gradient_definition(self):
        rng = np.random.default_rng(6)
        F, G = random_form(4, rng), random_form(4, rng)
        modes = modes_of(4)
        _, Q = F.matrix(modes)
        _, P = G.matrix(modes)
        lam = np.array([(a.k1**2 + a.k2**2) ** self.theta for a in modes])
        w = sample_mu(4, 3)
        x = np.array([w[a] for a in modes])
        direct = np.sum(lam * (2 * Q @ x) * (2 * P @ x))
        assert evaluate_form(carre_du_champ(F, G, self.theta), w) == pytest.approx(direct, rel=1e-12)

    def test_gaussian_ibp(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            F, G = random_form(8, rng), random_form(8, rng)
            lhs = expectation_product(F, generator_apply(G, self.theta))
            rhs = expectation(carre_du_champ(F, G, self.theta))
            assert abs(lhs + rhs) <= 1e-10 * max(1.0, abs(rhs))

    def test_wick_product_mc(self):
        rng = np.random.default_rng(8)
        F, G = random_form(3, rng, 4), random_form(3, rng, 4)
        w = sample_mu_array(3, [derive_seed(5, r) for r in range(40_000)])
        x = evaluate_form_array(F, w) * evaluate_form_array(G, w)
        se = x.std(ddof=1) / np.sqrt(len(x))
        assert abs(x.mean() - expectation_product(F, G)) <= 4 * se


class TestBForm:
    def test_matches_b_mode(self):
        m = 8
        forms = {k: b_mode_as_form(k, m) for k in modes_of(m)}
        for seed in range(50):
            w = sample_mu(m, seed)
            for k, qf in forms.items():
                assert evaluate_form(qf, w) == pytest.approx(b_mode(w, k, m), rel=1e-12, abs=1e-12)

    def test_rejects_outside(self):
        with pytest.raises(ValueError):
            b_mode_as_form((3, 3), 4)

    def test_no_diagonal_mass(self):
        for k in modes_of(8):
            qf = b_mode_as_form(k, 8)
            assert all(a != b for a, b in qf.entries)
            assert expectation(qf) == 0.0

    def test_no_self_coupling(self):
        for k in modes_of(8):
            assert all(k not in pair for pair in b_mode_as_form(k, 8).entries)


class TestPoisson:
    @pytest.mark.parametrize("theta", [2.25, 2.5, 3.0, 3.5])
    def test_exact_identity(self, theta):
        m = 16
        worst = max(poisson_residual(k, m, theta) for k in modes_of(8))
        assert worst <= 1e-12

    def test_outside_is_zero(self):
        assert h_poisson((5, 5), 6, 2.5) == QuadraticForm({}, 0.0, 6)

    def test_cutoff_one(self):
        assert h_poisson((1, 1), 1, 2.5).entries == {}
        with pytest.raises(ValueError):
            poisson_residual((1, 1), 1, 2.5)

    def test_damping_in_theta(self):
        lo = h_poisson((1, 1), 8, 4.0).max_abs()
        hi = h_poisson((1, 1), 8, 8.0).max_abs()
        assert hi <= lo * 4.0**-4

    def test_mean_zero_on_trajectory_scale(self):
        assert expectation(h_poisson((2, 3), 8, 2.5)) == 0.0

    def test_isotropic_denominator_is_not_a_solution(self):
        # (|h|^2 + |l|^2)^theta only matches the second-chaos eigenvalue at theta = 1
        assert poisson_residual((1, 2), 8, 1.0, denominator="isotropic") <= 1e-14
        assert poisson_residual((1, 2), 8, 2.5, denominator="isotropic") > 0.1


class TestExpectedCarre:
    def test_matches_monte_carlo(self):
        m, theta = 8, 2.5
        H = h_poisson((1, 1), m, theta)
        E = carre_du_champ(H, H, theta)
        w = sample_mu_array(m, [derive_seed(17, r) for r in range(10_000)])
        x = evaluate_form_array(E, w)
        se = x.std(ddof=1) / np.sqrt(len(x))
        assert abs(x.mean() - expected_carre((1, 1), m, theta)) <= 4 * se
        assert expectation(E) == pytest.approx(expected_carre((1, 1), m, theta), rel=1e-12)

    def test_monotone_in_theta(self):
        vals = [expected_carre((2, 1), 10, t) for t in (2.1, 2.5, 3.0, 3.5, 4.0)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_increment_is_difference_form(self):
        theta = 2.5
        d = h_poisson((1, 1), 12, theta) - h_poisson((1, 1), 6, theta)
        direct = expectation(carre_du_champ(d, d, theta))
        assert expected_carre_increment((1, 1), 12, 6, theta) == pytest.approx(direct, rel=1e-10)

    def test_increment_validation(self):
        with pytest.raises(ValueError):
            expected_carre_increment((1, 1), 8, 8, 2.5)
        for n, m in itertools.product((9, 16), (4, 8)):
            assert expected_carre_increment((1, 1), n, m, 2.5) >= 0

    def test_majorant_form(self):
        # the one-index majorant sum, evaluated literally
        k, m, theta = (2, 1), 6, 2.5
        total = 0.0
        for h1, h2 in itertools.product(range(-m, m + 1), repeat=2):
            l1, l2 = k[0] - h1, k[1] - h2
            if 0 in (h1, h2, l1, l2) or h1**2 + h2**2 > m * m or l1**2 + l2**2 > m * m:
                continue
            nh, nl = h1**2 + h2**2, l1**2 + l2**2
            g = 2 * (-l1 * h2 + l2 * h1) / (h2**2 * (nl + nh) ** theta)
            total += nh**theta * g * g
        assert expected_carre(k, m, theta, method="majorant") == pytest.approx(total, rel=1e-12)
