import math

import numpy as np
import pytest

from fbound.core import DomainError, FboundError, MarketParams
from fbound.gamma_eq import (EuroConfig, GammaConfig, RapmParams, _bs_call, bid_ask,
                             calibrate_rapm, gamma_closed_form, initial_gamma,
                             optimal_hedging_interval, price_european_rapm, r_tc, r_vp,
                             rapm_value, solve_gamma_equation)
from fbound.oracles import bs_european_price

P = MarketParams(r=0.011, q=0.0, E=25.0, T=1.0, sigma=0.3)


@pytest.fixture(scope="module")
def fields():
    return {mu: solve_gamma_equation(P, mu, GammaConfig(), save_every=200) for mu in (0.0, 0.2)}


def test_rapm_params():
    assert RapmParams(0.01, 5).mu == pytest.approx(3 * (1e-4 * 5 / (2 * math.pi)) ** (1 / 3))
    with pytest.raises(DomainError):
        RapmParams(-0.01, 5)


def test_hedging_interval():
    rp = RapmParams(0.01, 30)
    dt, rmin = optimal_hedging_interval(rp, 0.3, 10.0, 0.1)
    assert r_tc(dt, 0.01, 0.3, 10, 0.1) == pytest.approx(2 * r_vp(dt, 30, 0.3, 10, 0.1), rel=1e-10)
    assert rmin == pytest.approx(r_tc(dt, 0.01, 0.3, 10, 0.1) + r_vp(dt, 30, 0.3, 10, 0.1),
                                 rel=1e-10)
    # first-order condition and convexity
    f = lambda t: r_tc(t, 0.01, 0.3, 10, 0.1) + r_vp(t, 30, 0.3, 10, 0.1)  # noqa: E731
    d = 1e-4 * dt
    assert abs((f(dt + d) - f(dt - d)) / (2 * d)) < 1e-8 * rmin / dt
    assert f(dt + d) + f(dt - d) - 2 * f(dt) > 0
    _, r1 = optimal_hedging_interval(rp, 0.3, 1.0, 1.0)
    assert r1 == pytest.approx(1.5 * (1e-4 * 30 / (2 * math.pi)) ** (1 / 3) * 0.09, rel=1e-12)
    assert optimal_hedging_interval(RapmParams(0.0, 5), 0.3, 1, 1) == (0.0, 0.0)
    assert optimal_hedging_interval(RapmParams(0.01, 0), 0.3, 1, 1) == (math.inf, 0.0)
    with pytest.raises(DomainError):
        optimal_hedging_interval(rp, 0.3, 1.0, 0.0)


def test_initial_gamma():
    x = np.linspace(-1.8, 1.8, 4001)
    H = initial_gamma(P, 0.005, x)
    assert np.all(H >= 0)
    assert np.trapezoid(H, x) == pytest.approx(1.0, abs=1e-3)
    peak = -(P.r - P.q - P.sigma ** 2 / 2) * 0.005
    assert x[np.argmax(H)] == pytest.approx(peak, abs=x[1] - x[0])
    with pytest.raises(DomainError):
        initial_gamma(P, 0.0, x)


def test_gamma_mass_and_positivity(fields):
    for g in fields.values():
        assert np.all(g.H >= 0)
        assert np.max(np.abs(g.mass - 1.0)) < 1e-3


def test_gamma_closed_form(fields):
    # the bound is met at tau = T; the narrow early-time peak spans few cells
    g = fields[0.0]
    err = [np.max(np.abs(H - gamma_closed_form(P, g.tau_star, g.x, t)))
           for t, H in zip(g.tau, g.H)]
    assert err[-1] < 1e-3
    assert np.all(np.diff(err[1:]) < 0)


def test_gamma_enhanced_diffusion(fields):
    assert fields[0.2].H[-1].max() < fields[0.0].H[-1].max()


def test_gamma_negative_mu():
    with pytest.raises(DomainError):
        solve_gamma_equation(P, -0.1, GammaConfig(m=10))


@pytest.fixture(scope="module")
def curves():
    return {mu: price_european_rapm(P, mu) for mu in (0.0, 0.1, 0.3)}


def test_european_mu0_matches_bs(curves):
    S, V = curves[0.0]
    v = float(np.interp(math.log(25.0), np.log(S), V))
    assert v == pytest.approx(bs_european_price(25.0, P, 1.0), rel=1e-3)
    assert bs_european_price(25.0, P, 1.0) == pytest.approx(_bs_call(25.0, 25, 0.011, 0, 0.3, 1))


def test_european_rapm_properties(curves):
    S, V0 = curves[0.0]
    _, V1 = curves[0.1]
    _, V3 = curves[0.3]
    bs = bs_european_price(S, P, 1.0)
    assert np.all(V1 >= bs - 1e-3)
    assert np.all(V1 <= V3 + 1e-6) and np.all(V0 <= V1 + 1e-6)
    # convexity on the uniform log grid: second differences in S
    for V in (V0, V1, V3):
        dS = np.diff(S)
        slope = np.diff(V) / dS
        assert np.all(np.diff(slope) >= -1e-8)


def test_european_put_and_edges():
    S, V = price_european_rapm(P, 0.0, payoff="put")
    v = float(np.interp(math.log(25.0), np.log(S), V))
    assert v == pytest.approx(bs_european_price(25.0, P, 1.0, "put"), rel=2e-3)
    S0, V0 = price_european_rapm(P, 0.2, tau=0.0)
    assert np.allclose(V0, np.maximum(S0 - 25, 0))


def test_bid_ask():
    b, m, a = bid_ask(P, RapmParams(0.01, 0.0), 25.0)
    assert a == m == b
    spreads = []
    for R in (1.0, 5.0, 20.0):
        b, m, a = bid_ask(P, RapmParams(0.01, R), 25.0)
        assert a >= m >= b
        assert m == pytest.approx(0.5 * (a + b))
        spreads.append(a - b)
    assert spreads[0] < spreads[1] < spreads[2]


def test_calibration_round_trip():
    _, mid, ask = bid_ask(P, RapmParams(0.01, 5.0), 25.0)
    sg, R, res = calibrate_rapm(mid, ask, 0.01, P, 25.0)
    assert sg == pytest.approx(0.3, rel=1e-3)
    assert R == pytest.approx(5.0, rel=1e-3)
    assert res < 1e-6 * P.E


def test_calibration_zero_spread():
    mid = rapm_value(P, RapmParams(0.01, 0.0), 25.0)
    sg, R, _ = calibrate_rapm(mid, mid, 0.01, P, 25.0)
    assert sg == pytest.approx(0.3, rel=1e-3)
    assert R < 1e-6


def test_calibration_infeasible():
    with pytest.raises(FboundError):
        calibrate_rapm(3.0, 2.9, 0.01, P, 25.0)
