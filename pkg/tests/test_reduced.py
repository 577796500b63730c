import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from duobath import reduced as rd
from duobath.model import ModelParams
from duobath.oscillator import c_hat, k_const

CH = c_hat()


def params(k=2.0, t_hot=0.3, **kw):
    smoothing = "regularized" if k < 1 else "pure-power"
    return ModelParams(alpha=1.0, gamma=1.0, t_cold=1.0, t_hot=t_hot, k=k,
                       smoothing=smoothing, **kw)


class TestStationaryDensity:
    def test_power_law_closed_form(self):
        d = rd.stationary_density(rd.ReducedParams(eta=3.0, sigma=-1.0))
        xs = np.array([1.0, 2.0, 5.0])
        assert np.allclose(d.pdf(xs), 2.0 * xs ** -3.0)
        assert d.cdf(3.0) == pytest.approx(1 - 3.0 ** -2)

    def test_exponential_closed_form(self):
        d = rd.stationary_density(rd.ReducedParams(eta=1.0, sigma=0.0))
        xs = np.array([1.0, 2.0, 4.0])
        assert np.allclose(d.pdf(xs), np.exp(1 - xs))

    def test_normalization_by_quadrature(self):
        for (eta, sigma) in ((1.0, -0.5), (2.0, 0.5), (0.5, 1.0), (3.0, -1.0)):
            d = rd.stationary_density(rd.ReducedParams(eta=eta, sigma=sigma))
            total, err = quad(d.pdf, 1.0, np.inf, limit=200)
            assert abs(total - 1.0) < 1e-10 + 10 * err

    def test_no_invariant_measure_cases(self):
        with pytest.raises(rd.NoInvariantMeasure):
            rd.stationary_density(rd.ReducedParams(eta=1.0, sigma=-1.0))
        with pytest.raises(rd.NoInvariantMeasure):
            rd.stationary_density(rd.ReducedParams(eta=1.0, sigma=-2.0))
        with pytest.raises(rd.NoInvariantMeasure):
            rd.stationary_density(rd.ReducedParams(eta=-0.5, sigma=-1.0))


class TestSimulation:
    def test_deterministic_under_seed(self):
        rp = rd.ReducedParams(eta=1.0, sigma=0.0)
        a = rd.simulate_reduced(rp, 0.01, 5.0, 256, seed=9)
        b = rd.simulate_reduced(rp, 0.01, 5.0, 256, seed=9)
        assert np.array_equal(a, b)
        c = rd.simulate_reduced(rp, 0.01, 5.0, 256, seed=10)
        assert not np.array_equal(a, c)

    def test_strong_mean_reversion_concentrates(self):
        s = rd.simulate_reduced(rd.ReducedParams(eta=20.0, sigma=1.0),
                                0.002, 10.0, 4000, seed=1)
        assert s.mean() < 1.5
        assert np.all(s >= 1.0)

    def test_ccdf_slope_heavy_tail(self):
        s = rd.sample_stationary(rd.ReducedParams(eta=3.0, sigma=-1.0),
                                 dt=0.02, burn_in=800.0, n_paths=4000,
                                 n_snapshots=8, snapshot_gap=80.0, seed=4)
        xs = np.geomspace(3.0, 30.0, 12)
        ccdf = np.array([(s > x).mean() for x in xs])
        slope = np.polyfit(np.log(xs), np.log(ccdf), 1)[0]
        assert abs(slope + 2.0) < 0.35


class TestClassifiers:
    def test_reduced_rows(self):
        r = rd.classify_reduced(rd.ReducedParams(eta=3.0, sigma=-1.0))
        assert r.regime_id == "sigma=-1,eta>1"
        assert r.integrability.params["exponent"] == pytest.approx(2.0)
        assert r.speed.params["exponent"] == pytest.approx(1.0)
        assert r.prefactor.params["exponent"] == pytest.approx(4.0)

        r = rd.classify_reduced(rd.ReducedParams(eta=1.0, sigma=-0.5))
        assert r.speed.kind == "stretched-decay"
        assert r.speed.params["exponent"] == pytest.approx(1.0 / 3.0)

        r = rd.classify_reduced(rd.ReducedParams(eta=1.0, sigma=-2.0))
        assert (r.integrability.kind, r.speed.kind, r.prefactor.kind) \
            == ("none", "none", "none")

    def test_constants(self):
        assert rd.zeta_star(1.0, 0.6354699, 0.3) == pytest.approx(0.8386748, abs=1e-7)
        assert rd.zeta_star(1.0, CH, CH) == pytest.approx(0.0)
        assert rd.kappa(2.0) == pytest.approx(0.0)
        assert rd.kappa(1.0) == pytest.approx(1.0)

    def test_heuristic_reduction_branches(self):
        rp = rd.heuristic_reduction(2.0, params(t_hot=CH), CH, k_const(2.0))
        assert rp.sigma == -1.0
        assert rp.eta == pytest.approx(1.0)  # critical coupling

        rp = rd.heuristic_reduction(1.5, params(k=1.5), 1.0, k_const(1.5))
        assert rp.sigma == pytest.approx(4.0 / 1.5 - 3.0)

        rp = rd.heuristic_reduction(0.25, params(k=0.25), 1.0, k_const(0.25))
        assert rp.sigma == pytest.approx(-0.5)

        rp = rd.heuristic_reduction(3.0, params(k=3.0), 1.0, k_const(3.0))
        assert rp.sigma == -1.0 and rp.eta < 1.0

        with pytest.raises(ValueError):
            rd.heuristic_reduction(1.0, params(k=1.0), 1.0, k_const(1.0))
        with pytest.raises(ValueError):
            rd.heuristic_reduction(-1.0, params(), 1.0, 1.0)

    def test_full_rows(self):
        assert rd.classify_full(3.0, params(k=3.0), CH).regime_id == "k>2"
        r = rd.classify_full(1.5, params(k=1.5), CH)
        assert r.integrability.kind == "exp-power"
        assert r.integrability.params["exponent"] == pytest.approx(1.0 / 3.0)
        assert r.speed.params["exponent"] == pytest.approx(0.5)
        r1 = rd.classify_full(1.0, params(k=1.0), CH)
        assert r1.speed.kind == "exp-decay"
        assert r1.prefactor.kind == "power"   # H^eps prefactor row

    def test_critical_cell_undetermined(self):
        r = rd.classify_full(2.0, params(t_hot=CH), CH)
        assert r.regime_id == "k=2-critical"
        assert r.speed.kind == "undetermined"

    def test_boundaries(self):
        # regime changes occur exactly at k in {0, 1/2, 1, 4/3, 2}
        ids = [rd.classify_full(k, params(k=max(k, 1e-3), t_hot=0.3), CH).regime_id
               if k > 0 else rd.classify_full(k, params(), CH).regime_id
               for k in (-1.0, 0.0, 0.3, 0.5, 0.8, 1.0, 1.2, 4.0 / 3.0,
                         1.7, 2.0, 2.3)]
        assert ids == ["k<=0", "k<=0", "0<k<=1/2", "1/2<=k<1", "1/2<=k<1",
                       "k=1", "1<k<=4/3", "1<k<=4/3", "4/3<=k<2",
                       "k=2-sub", "k>2"]

    @given(st.floats(min_value=-3.0, max_value=5.0,
                     allow_nan=False, allow_infinity=False))
    @settings(max_examples=200, deadline=None)
    def test_total_on_reals(self, k):
        p = params(k=k if k >= 1 else max(k, 0.01), t_hot=0.3)
        row = rd.classify_full(k, p, CH)
        assert row.regime_id != "k=2-critical"
        assert row.speed.kind in ("none", "poly-decay", "stretched-decay",
                                  "exp-decay")

    def test_speed_family_correspondence(self):
        # reduction -> surrogate classifier agrees with the full table
        cases = [(0.25, 0.3), (0.75, 0.3), (1.5, 0.3), (2.0, 0.3),
                 (2.0, 2.0 * CH), (3.0, 0.3)]
        for k, th in cases:
            p = params(k=k, t_hot=th)
            rp = rd.heuristic_reduction(k, p, CH if k == 2.0 else 1.0,
                                        k_const(k))
            red = rd.classify_reduced(rp)
            full = rd.classify_full(k, p, CH)
            assert red.speed.kind == full.speed.kind, (k, th)
            if red.speed.kind == "stretched-decay":
                assert red.speed.params["exponent"] == pytest.approx(
                    full.speed.params["exponent"])
            if k == 2.0 and th < CH:
                # zeta = (eta - 1)/2 correspondence, exact
                assert (rp.eta - 1) / 2 == pytest.approx(
                    rd.zeta_star(1.0, CH, th))
