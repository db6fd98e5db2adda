import math
import os
from pathlib import Path

import numpy as np
import pytest

import rslq

CONFIGS = Path(os.environ.get("RSLQ_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))


def test_tanh_riccati_and_value():
    spec = rslq.load_spec(str(CONFIGS / "tanh.toml"))
    ric = rslq.solve_riccati_ode(spec, 200)
    assert ric.P(0, 1)[0, 0] == pytest.approx(math.tanh(1.0), abs=1e-9)
    adj = rslq.solve_adjoint_ode(spec, ric)
    value, terms = rslq.optimal_value(spec, ric, adj)
    assert value == pytest.approx(math.tanh(1.0), abs=1e-9)
    assert sum(terms.values()) == pytest.approx(value, abs=1e-12)


def test_sech_adjoint():
    spec = rslq.load_spec(str(CONFIGS / "sech.toml"))
    ric = rslq.solve_riccati_ode(spec, 200)
    adj = rslq.solve_adjoint_ode(spec, ric)
    times = np.asarray(adj.times)
    k = np.array([adj.K(j, 1)[0] for j in range(len(times))])
    np.testing.assert_allclose(k, 1.0 / np.cosh(1.0 - times) - 1.0, atol=1e-9)


def test_picard_matches_direct_and_policy_is_callable():
    spec = rslq.load_spec(str(CONFIGS / "two_regime.toml"))
    assert spec.regimes == 2 and spec.initial_regime == 1
    direct = rslq.solve_riccati_ode(spec, 100)
    picard = rslq.solve_riccati_picard(spec, 100)
    for node in (0, 50, 100):
        for regime in (1, 2):
            np.testing.assert_allclose(picard.P(node, regime), direct.P(node, regime), atol=1e-8)
    policy = rslq.build_policy(direct, rslq.solve_adjoint_ode(spec, direct), spec)
    x = np.array([1.0, -0.5])
    u = policy(0.0, x, 1)
    np.testing.assert_allclose(u, -policy.Gamma(0, 1) @ x + policy.phi(0, 1), atol=1e-14)


def test_simulation_is_seeded():
    spec = rslq.load_spec(str(CONFIGS / "tanh_noise.toml"))
    ric = rslq.solve_riccati_ode(spec, 50)
    policy = rslq.build_policy(ric, rslq.solve_adjoint_ode(spec, ric), spec)
    a = rslq.simulate_closed_loop(spec, policy, 2000, seed=3)
    b = rslq.simulate_closed_loop(spec, policy, 2000, seed=3)
    assert a == b
    expected = math.tanh(1.0) + 0.25 * math.log(math.cosh(1.0))
    assert abs(a["mean"] - expected) < 4.0 * a["std_error"] + 0.02


def test_occupation_and_errors():
    probs = rslq.occupation_probabilities(np.array([[-1.0, 1.0], [1.0, -1.0]]), 1, 1.0, 100)
    assert probs[-1, 0] == pytest.approx(0.5 * (1.0 + math.exp(-2.0)), abs=1e-9)
    valid, report = rslq.validate(rslq.load_spec(str(CONFIGS / "bad_generator.toml")))
    assert not valid and "row 2" in report
    with pytest.raises(rslq.RslqError):
        rslq.parse_spec("[problem\n")
