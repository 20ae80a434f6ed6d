import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tvhawkes.bias import (
    AsymptoticTensors,
    BiasLookupError,
    BiasTable,
    LookupWarning,
    bias_from_tensors,
    bias_lookup,
    build_bias_table,
    control_variate_mean,
    estimate_bc,
    estimate_tensors,
)
from tvhawkes.estimate import estimate_naive
from tvhawkes.model import make_partition, model_path
from tvhawkes.simulate import SimConfig, realize_path, simulate_hawkes


def random_table(seed=0, deltas=(100.0, 200.0, 400.0)):
    g = np.random.default_rng(seed)
    nu, a, b = (0.2, 0.6, 1.0), (5.0, 10.0), (20.0, 30.0, 50.0)
    shape = (len(deltas), 3, 2, 3)
    return BiasTable(nu, a, b, deltas, g.normal(size=shape + (3,)), np.full(shape + (3,), 0.01),
                     np.ones(shape, bool), 100, seed)


class TestLookup:
    def test_exact_at_knots(self):
        t = random_table()
        for d, L in enumerate(t.deltas):
            for i, x in enumerate(t.nu):
                for j, y in enumerate(t.a):
                    for k, z in enumerate(t.b):
                        v, clamped = t.lookup((x, y, z), L)
                        assert not clamped
                        assert np.array_equal(v, t.values[d, i, j, k])

    def test_zero_table(self):
        t = BiasTable.zeros()
        v, _ = t.lookup((0.77, 9.1, 33.3), 250.0)
        assert np.array_equal(v, np.zeros(3))

    def test_linear_in_inverse_delta(self):
        t = random_table()
        th = (0.6, 10.0, 30.0)
        mid = 2.0 / (1 / 100 + 1 / 200)  # midpoint of 1/100 and 1/200 in 1/Delta
        v, _ = t.lookup(th, mid)
        assert np.allclose(v, 0.5 * (t.values[0, 1, 1, 1] + t.values[1, 1, 1, 1]), rtol=1e-12)

    def test_trilinear_midpoint(self):
        t = random_table()
        v, _ = t.lookup((0.4, 7.5, 25.0), 200.0)
        ref = t.values[1, 0:2, 0:2, 0:2].mean(axis=(0, 1, 2))
        assert np.allclose(v, ref, rtol=1e-12)

    @given(st.floats(0.2, 1.0), st.floats(5, 10), st.floats(20, 50), st.floats(100, 400))
    def test_affine_reproduced(self, x, y, z, L):
        # a table affine in (theta, 1/Delta) is reproduced exactly inside the hull
        c = np.array([0.3, -1.2, 2.0])
        t = random_table()
        for d, D in enumerate(t.deltas):
            for i, xx in enumerate(t.nu):
                for j, yy in enumerate(t.a):
                    for k, zz in enumerate(t.b):
                        t.values[d, i, j, k] = c * (xx + 0.1 * yy - 0.05 * zz) + 50.0 / D
        v, clamped = t.lookup((x, y, z), L)
        assert not clamped
        assert np.allclose(v, c * (x + 0.1 * y - 0.05 * z) + 50.0 / L, rtol=1e-9, atol=1e-12)

    def test_clamp_flag_and_warning(self):
        t = random_table()
        v, clamped = t.lookup((3.0, 10.0, 30.0), 200.0)
        assert clamped
        assert np.array_equal(v, t.lookup((1.0, 10.0, 30.0), 200.0)[0])
        with pytest.warns(LookupWarning):
            bias_lookup(t, (3.0, 10.0, 30.0), 200.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            bias_lookup(t, (0.5, 8.0, 30.0), 200.0)

    def test_delta_extrapolation_scales(self):
        t = random_table()
        v, clamped = t.lookup((0.6, 10.0, 30.0), 800.0)
        assert clamped
        assert np.allclose(v, 0.5 * t.values[2, 1, 1, 1])

    def test_invalid_neighbourhood_raises(self):
        t = random_table()
        t.valid[1, 1, 1, 1] = False
        t.values[1, 1, 1, 1] = np.nan
        with pytest.raises(BiasLookupError):
            t.lookup((0.7, 10.0, 35.0), 200.0)
        # a cell outside the neighbourhood does not matter
        v, _ = t.lookup((0.2, 5.0, 50.0), 400.0)
        assert np.all(np.isfinite(v))

    def test_round_trip(self, tmp_path):
        t = random_table(3)
        t.valid[0, 0, 0, 0] = False
        t.values[0, 0, 0, 0] = np.nan
        p = tmp_path / "t.json"
        t.save(p)
        u = BiasTable.load(p)
        assert np.array_equal(u.values, t.values, equal_nan=True)
        assert np.array_equal(u.valid, t.valid)
        assert json.loads(p.read_text())["format"] == "tvhawkes.bias_table"

    def test_plugin_round_trip(self, tmp_path):
        t = random_table(4)
        t.plugin = np.random.default_rng(1).normal(size=t.values.shape)
        t.save(tmp_path / "t.json")
        u = BiasTable.load(tmp_path / "t.json")
        assert u.iterated and np.array_equal(u.plugin, t.plugin)
        assert not BiasTable.load(self._plain(tmp_path)).iterated

    @staticmethod
    def _plain(tmp_path):
        p = tmp_path / "plain.json"
        random_table(5).save(p)
        return p

    def test_bad_file(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            BiasTable.load(p)


class TestIterated:
    def test_iterated_is_two_b_minus_c(self):
        t = random_table(6)
        plain = [t.lookup((0.5, 7.0, 41.0), L)[0] for L in (150.0, 300.0)]
        t.plugin = np.random.default_rng(2).normal(size=t.values.shape)
        c = [BiasTable(t.nu, t.a, t.b, t.deltas, t.plugin, t.se, t.valid, 0, 0).lookup((0.5, 7.0, 41.0), L)[0]
             for L in (150.0, 300.0)]
        for L, p, q in zip((150.0, 300.0), plain, c):
            assert np.allclose(t.lookup((0.5, 7.0, 41.0), L)[0], 2 * p - q)
            assert np.allclose(t.lookup((0.5, 7.0, 41.0), L, iterated=False)[0], p)

    def test_missing_plugin_cell(self):
        t = random_table(7)
        t.plugin = np.zeros(t.values.shape)
        t.plugin[1, 1, 0, 1] = np.nan
        t.lookup((0.7, 7.0, 35.0), 200.0, iterated=False)
        with pytest.raises(BiasLookupError):
            t.lookup((0.7, 7.0, 35.0), 200.0)

    @given(st.integers(0, 10_000), st.integers(0, 2))
    def test_lookup_knot_matches_scalar(self, seed, di):
        t = random_table(seed % 7)
        t.plugin = np.random.default_rng(seed).normal(size=t.values.shape)
        g = np.random.default_rng(seed)
        th = np.c_[g.uniform(0.0, 1.2, 20), g.uniform(3.0, 12.0, 20), g.uniform(15.0, 55.0, 20)]
        for it in (False, True):
            v, ok = t.lookup_knot(th, di, iterated=it)
            w = np.array([t.lookup(x, t.deltas[di], iterated=it)[0] for x in th])
            assert ok.all() and np.allclose(v, w, atol=1e-12)

    def test_lookup_knot_flags_invalid(self):
        t = random_table(8)
        t.valid[0, 1, 0, 1] = False
        _, ok = t.lookup_knot([[0.5, 7.0, 25.0], [0.2, 5.0, 50.0]], 0)
        assert ok.tolist() == [False, True]

    def test_single_cell_plugin_equals_bias(self):
        # with one knot every draw is looked up at the knot itself, so c = b
        t = build_bias_table(nu=(0.8,), a=(11.0,), b=(30.0,), deltas=(216.0,), mc_paths=200, seed=9)
        assert t.iterated
        assert np.allclose(t.plugin, t.values, atol=1e-12)
        assert not build_bias_table(nu=(0.8,), a=(11.0,), b=(30.0,), deltas=(216.0,), mc_paths=200,
                                    seed=9, iterated=False).iterated

    def test_plugin_tracks_convexity(self):
        # b grows with b and is convex there, so E b(theta_hat) exceeds b at the truth
        t = build_bias_table(nu=(0.8,), a=(11.0,), b=(20.0, 30.0, 40.0), deltas=(216.0,), mc_paths=400,
                             seed=2)
        assert np.all(np.isfinite(t.plugin))
        assert t.plugin[0, 0, 0, 1, 2] > t.values[0, 0, 0, 1, 2]


class TestBuild:
    def test_deterministic(self):
        kw = dict(nu=(0.8,), a=(11.0,), b=(30.0,), deltas=(216.0,), mc_paths=100, seed=5)
        t1, t2 = build_bias_table(**kw), build_bias_table(**kw)
        assert t1.to_dict() == t2.to_dict()
        assert t1.valid.all()

    def test_too_few_paths(self):
        with pytest.raises(ValueError):
            build_bias_table(mc_paths=10)

    def test_poisson_subtable_unbiased(self):
        t = build_bias_table(nu=(0.4, 1.2), deltas=(108.0,), mc_paths=2000, seed=1, fixed={"a": 0.0})
        assert t.a.tolist() == [0.0]
        # the score is an exact multiple of the error here, so the adjusted mean is 0 to rounding
        assert np.all(np.abs(t.values[..., 0]) <= 3 * t.se[..., 0] + 1e-12)
        assert np.all(t.values[..., 1:] == 0)
        raw = build_bias_table(nu=(0.4, 1.2), deltas=(108.0,), mc_paths=2000, seed=1, fixed={"a": 0.0},
                               control_variate=False)
        assert np.all(np.abs(raw.values[..., 0]) <= 3 * raw.se[..., 0])

    def test_control_variate_agrees(self):
        kw = dict(nu=(0.8,), a=(11.0,), b=(30.0,), deltas=(216.0,), mc_paths=2000, seed=3)
        cv, raw = build_bias_table(**kw), build_bias_table(**kw, control_variate=False)
        assert np.all(cv.se < raw.se)
        diff = np.abs(cv.values - raw.values)
        assert np.all(diff <= 3 * np.hypot(cv.se, raw.se))


@given(st.integers(0, 1000))
def test_control_variate_mean(seed):
    g = np.random.default_rng(seed)
    n = 4000
    score = np.column_stack([g.normal(size=n), g.normal(size=n), np.zeros(n)])
    mu = np.array([0.1, -0.2, 0.3])
    err = mu + score @ np.array([[2.0, 0.5, 0.0], [0.0, 1.0, 3.0], [0.0, 0.0, 0.0]]) + 0.01 * g.normal(size=(n, 3))
    m, se = control_variate_mean(err, score)
    assert np.all(np.abs(m - mu) <= 5 * se + 1e-3 / np.sqrt(n))
    assert np.all(se < 0.01)


def rand_tensors(g, sym=True):
    A = g.normal(size=(3, 3))
    G = A @ A.T + 3 * np.eye(3)
    K = g.normal(size=(3, 3, 3))
    if sym:
        K = sum(np.transpose(K, p) for p in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]) / 6
    C = g.normal(size=(3, 3, 3))
    C = 0.5 * (C + np.transpose(C, (0, 2, 1)))
    Q = g.normal(size=(3, 3, 3))
    Q = 0.5 * (Q + np.transpose(Q, (0, 2, 1)))
    return G, K, C, Q


class TestTensorFormula:
    def test_null(self):
        t = AsymptoticTensors(np.eye(3), np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), 1.0)
        assert np.array_equal(bias_from_tensors(t), np.zeros(3))

    def test_single_entry(self):
        K = np.zeros((3, 3, 3))
        K[0, 0, 0] = 2.0
        t = AsymptoticTensors(np.eye(3), K, np.zeros_like(K), np.zeros_like(K), 1.0)
        assert np.allclose(bias_from_tensors(t), [1.0, 0.0, 0.0], atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        g = np.random.default_rng(seed)
        G, K, C, Q = rand_tensors(g)
        Gi = np.linalg.inv(G)
        ref = np.zeros(3)
        for k in range(3):
            for j in range(3):
                for l in range(3):
                    for m in range(3):
                        ref[k] += 0.5 * Gi[j, k] * Gi[l, m] * (K[j, l, m] + 2 * (C[l, j, m] + Q[l, j, m]))
        got = bias_from_tensors(AsymptoticTensors(G, K, C, Q, 1.0))
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)

    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_in_third_order_tensors(self, seed, s1, s2):
        g = np.random.default_rng(seed)
        G, K1, C1, Q1 = rand_tensors(g)
        _, K2, C2, Q2 = rand_tensors(g)
        f = lambda K, C, Q: bias_from_tensors(AsymptoticTensors(G, K, C, Q, 1.0))
        lhs = f(s1 * K1 + s2 * K2, s1 * C1 + s2 * C2, s1 * Q1 + s2 * Q2)
        rhs = s1 * f(K1, C1, Q1) + s2 * f(K2, C2, Q2)
        assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("theta", [0.5, 1.0, 4.0, 9.0])
    def test_cox_toy(self, theta):
        # intensity theta^(1/2): Gamma, K, C in closed form, Q = 0, bias sqrt(theta)
        G = np.eye(3)
        K, C = np.zeros((3, 3, 3)), np.zeros((3, 3, 3))
        G[0, 0] = 1 / (4 * theta ** 1.5)
        K[0, 0, 0] = 5 / (8 * theta ** 2.5)
        C[0, 0, 0] = -1 / (4 * theta ** 2.5)
        t = AsymptoticTensors(G, K, C, np.zeros_like(K), 1.0, free=(True, False, False))
        assert bias_from_tensors(t) == pytest.approx([np.sqrt(theta), 0, 0], rel=1e-12)


class TestEstimateTensors:
    def test_poisson_information(self):
        t = estimate_tensors((2.0, 0.0, 30.0), horizon=5000.0, mc_paths=4, seed=1, free=(True, False, False))
        assert t.gamma[0, 0] == pytest.approx(0.5, abs=4 * t.se["gamma"][0, 0] + 1e-3)
        b = bias_from_tensors(t)
        assert b[1] == 0 and b[2] == 0
        # the Poisson MLE N/Delta is unbiased
        assert abs(b[0]) < 0.05

    def test_symmetry(self):
        t = estimate_tensors((0.8, 11.0, 30.0), horizon=4000.0, mc_paths=3, seed=2)
        assert np.array_equal(t.gamma, t.gamma.T)
        assert np.all(np.linalg.eigvalsh(t.gamma) > 0)
        for p in [(0, 2, 1), (1, 0, 2)]:
            diff = np.abs(t.K - np.transpose(t.K, p))
            assert np.all(diff <= 1e-3 * np.abs(t.K).max() + 4 * t.se["K"])

    def test_rejects_supercritical(self):
        with pytest.raises(ValueError):
            estimate_tensors((1.0, 40.0, 30.0))


def test_zero_table_matches_naive():
    rp = realize_path(model_path("I", 2160.0), 4)
    e = simulate_hawkes(SimConfig(4, 2160.0), rp)
    part = make_partition(2730, 273, 2160.0)
    nv = estimate_naive(e, part)
    bc = estimate_bc(e, part, table=BiasTable.zeros())
    assert np.array_equal(nv.theta_bar, bc.theta_bar)
    assert np.array_equal(nv.C_hat, bc.C_hat)
