import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperpe.measure import sample_mu
from hyperpe.spectral import (
    NormSpec,
    SnapshotError,
    SpectralField,
    apply_A,
    evaluate_physical,
    extend_array,
    extend_coefficient,
    fl_norm,
    format_snapshot,
    make_field,
    multiplier,
    parse_snapshot,
    project,
    read_snapshot,
    write_snapshot,
    zero_field,
)


def random_field(m, seed):
    return sample_mu(m, seed)


class TestMakeField:
    def test_empty_is_zero(self):
        f = make_field(4, {})
        assert f == zero_field(4)
        assert not f.coeffs.any()

    def test_single_mode(self):
        f = make_field(2, {(1, 1): 1.0})
        assert f[1, 1] == 1.0
        assert list(f.items()) == [((1, 1), 1.0)]

    def test_outside_cutoff_names_index(self):
        with pytest.raises(ValueError, match=r"\(3, 3\)"):
            make_field(2, {(3, 3): 1.0})

    def test_non_positive_index(self):
        with pytest.raises(ValueError):
            make_field(4, {(0, 1): 1.0})

    def test_non_finite(self):
        with pytest.raises(ValueError):
            make_field(4, {(1, 1): float("nan")})

    def test_lookup_outside_is_zero(self):
        f = make_field(3, {(1, 2): 2.0})
        assert f[5, 5] == 0.0
        assert f[0, 1] == 0.0

    def test_immutable(self):
        f = make_field(3, {(1, 2): 2.0})
        with pytest.raises(ValueError):
            f.coeffs[1, 2] = 1.0

    def test_rejects_off_disk_array(self):
        c = np.zeros((4, 4))
        c[3, 3] = 1.0
        with pytest.raises(ValueError):
            SpectralField(3, c)


class TestExtension:
    f = make_field(3, {(1, 2): 3.0})

    def test_sign_rule(self):
        assert extend_coefficient(self.f, (-1, 2)) == -3.0
        assert extend_coefficient(self.f, (-1, -2)) == 3.0
        assert extend_coefficient(self.f, (1, -2)) == -3.0

    def test_outside_support(self):
        assert extend_coefficient(self.f, (5, 5)) == 0.0

    def test_axis_rejected(self):
        with pytest.raises(ValueError):
            extend_coefficient(self.f, (0, 2))

    def test_array_matches_scalar(self):
        w = random_field(6, 1)
        ext = extend_array(w.coeffs)
        for h1 in range(-6, 7):
            for h2 in range(-6, 7):
                if h1 and h2:
                    assert ext[h1 + 6, h2 + 6] == extend_coefficient(w, (h1, h2))
                else:
                    assert ext[h1 + 6, h2 + 6] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32))
    def test_odd_in_each_component(self, h1, h2, seed):
        w = random_field(8, seed)
        v = extend_coefficient(w, (h1, h2))
        assert extend_coefficient(w, (-h1, h2)) == -v
        assert extend_coefficient(w, (h1, -h2)) == -v


class TestProject:
    def test_identity_above_cutoff(self):
        w = random_field(5, 2)
        assert project(w, 5) == w
        assert project(w, 9) == w

    def test_drops_outer_modes(self):
        w = make_field(5, {(1, 1): 1.0, (3, 3): 2.0})
        assert project(w, 2) == make_field(2, {(1, 1): 1.0})

    def test_contracts_norm(self):
        for seed in range(100):
            w = random_field(8, seed)
            assert fl_norm(project(w, 5)) <= fl_norm(w)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 1000))
    def test_composition(self, a, b, seed):
        w = random_field(10, seed)
        assert project(project(w, a), b) == project(w, min(a, b))


class TestNorms:
    def test_unit_mode(self):
        assert fl_norm(make_field(2, {(1, 1): 1.0}), NormSpec(2, 0)) == 1.0

    def test_sup_weighted(self):
        assert fl_norm(make_field(5, {(3, 4): 2.0}), NormSpec(math.inf, 1)) == pytest.approx(10.0)

    def test_weighted_l2(self):
        f = make_field(3, {(1, 1): 1.0, (1, 2): 1.0})
        assert fl_norm(f, NormSpec(2, 1)) == pytest.approx(math.sqrt(7))

    def test_bad_p(self):
        with pytest.raises(ValueError):
            fl_norm(zero_field(2), NormSpec(0.5, 0))

    @pytest.mark.parametrize("coeffs", [{(1, 1): 1.0}, {(1, 1): 0.3, (2, 1): -1.1, (1, 3): 0.7, (2, 2): 0.2, (3, 1): 1.5}])
    def test_l2_matches_quadrature(self, coeffs):
        f = make_field(4, coeffs)
        n = 64  # exact for trig polynomials of degree < n
        x = 2 * np.pi * np.arange(n) / n
        X, Z = np.meshgrid(x, x, indexing="ij")
        om, _, _ = evaluate_physical(f, np.column_stack([X.ravel(), Z.ravel()]))
        l2 = math.sqrt(np.sum(om**2) * (2 * np.pi / n) ** 2)
        assert l2 == pytest.approx(fl_norm(f), rel=1e-12)


class TestOperators:
    def test_apply_A(self):
        assert apply_A(make_field(3, {(1, 2): 4.0})) == make_field(3, {(1, 2): 1.0})
        assert apply_A(make_field(4, {(3, 1): 5.0})) == make_field(4, {(3, 1): 5.0})

    def test_apply_A_inverse(self):
        w = random_field(7, 3)
        K2 = np.arange(8)[None, :] ** 2
        back = SpectralField(7, apply_A(w).coeffs * K2)
        np.testing.assert_allclose(back.coeffs, w.coeffs, rtol=1e-15)

    def test_multiplier(self):
        w = random_field(6, 4)
        assert multiplier(w, 0) == w
        assert multiplier(make_field(5, {(3, 4): 1.0}), 1)[3, 4] == pytest.approx(25.0)
        np.testing.assert_allclose(multiplier(multiplier(w, 1.3), -1.3).coeffs, w.coeffs, rtol=1e-13)


class TestPhysical:
    def test_zero_field(self):
        pts = np.random.default_rng(0).uniform(0, 2 * np.pi, (10, 2))
        for arr in evaluate_physical(zero_field(4), pts):
            assert not arr.any()

    def test_single_mode_closed_form(self):
        f = make_field(2, {(1, 1): 1.0})
        om, v, w = evaluate_physical(f, [(np.pi / 2, np.pi / 2), (0.3, 1.1)])
        assert v[0] == pytest.approx(0.0, abs=1e-16)
        assert om[1] == pytest.approx(math.sin(0.3) * math.sin(1.1) / math.pi)
        assert v[1] == pytest.approx(-math.sin(0.3) * math.cos(1.1) / math.pi)
        assert w[1] == pytest.approx(math.cos(0.3) * math.sin(1.1) / math.pi)

    def test_boundary(self):
        w = random_field(8, 5)
        x = np.linspace(0, 2 * np.pi, 17)
        for z in (0.0, 2 * np.pi):
            om, _, wv = evaluate_physical(w, np.column_stack([x, np.full_like(x, z)]))
            assert np.max(np.abs(om)) < 1e-13
            assert np.max(np.abs(wv)) < 1e-13

    def test_v_zero_vertical_mean(self):
        w = random_field(8, 6)
        n = 64
        z = 2 * np.pi * np.arange(n) / n
        for x in (0.1, 1.7, 4.0):
            _, v, _ = evaluate_physical(w, np.column_stack([np.full(n, x), z]))
            assert abs(v.mean() * 2 * np.pi) <= 1e-10

    def test_velocity_matches_finite_difference(self):
        f = random_field(5, 7)
        c = make_field(5, dict(((k1, k2), v / k2**2) for (k1, k2), v in f.items()))
        p, h = np.array([[1.3, 2.1]]), 1e-6
        # v = -d_z A(w), w = d_x A(w), with A(w) evaluated as a field
        a = lambda q: evaluate_physical(c, q)[0][0]
        _, v, w = evaluate_physical(f, p)
        dz = (a(p + [0, h]) - a(p - [0, h])) / (2 * h)
        dx = (a(p + [h, 0]) - a(p - [h, 0])) / (2 * h)
        assert v[0] == pytest.approx(-dz, abs=1e-7)
        assert w[0] == pytest.approx(dx, abs=1e-7)


class TestSnapshot:
    def test_roundtrip(self, tmp_path):
        w = random_field(9, 8)
        path = tmp_path / "w.txt"
        write_snapshot(w, path)
        assert read_snapshot(path) == w

    def test_format(self):
        text = format_snapshot(make_field(3, {(2, 1): 0.5, (1, 2): -1.0}))
        assert text == "m=3 count=2\n1 2 -1\n2 1 0.5\n"

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "m=3\n",
            "m=3 count=1\n",
            "m=3 count=1\n1 2\n",
            "m=3 count=1\n1 x 0.5\n",
            "m=3 count=2\n1 2 1\n1 2 2\n",
            "m=3 count=1\n3 3 1.0\n",
        ],
    )
    def test_rejects_malformed(self, text):
        with pytest.raises(SnapshotError):
            parse_snapshot(text)
