"""Smoke test for the qeuler Python bindings.

Build and install the extension first, e.g.

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import cmath
import json
import math
import tempfile

import qeuler


def check_step_matches_map():
    m = qeuler.doubling_map()
    z = [cmath.exp(1j * math.pi / 5)]
    op = qeuler.StepOperator(m, 0.5)
    decoded, probability, norm_factor = op.step(z)
    assert abs(decoded[0] - m.apply(z)[0]) < 1e-12
    assert abs(probability - 0.5 ** 2 / 2) < 1e-12
    assert abs(norm_factor - 1.0) < 1e-9


def check_doubling_orbit():
    z0 = [cmath.exp(1j * math.pi / 5)]
    report = qeuler.run_deterministic(qeuler.doubling_map(), z0, 3)
    re, im = report["steps"][-1]["z"][0]
    assert abs(complex(re, im) - cmath.exp(8j * math.pi / 5)) < 1e-12


def check_custom_map_roundtrip():
    m = qeuler.PolynomialMap(2, 2)
    m.add_term(1, [2], 1.0)
    m.add_term(2, [1], 1j)
    again = qeuler.PolynomialMap.from_json(m.to_json())
    z = [0.6, 0.8j]
    assert again.apply(z) == m.apply(z)
    assert m.validate(64, 1)["measure_deviation"] < 1e-12


def check_integrate():
    om = qeuler.orszag_mclaughlin(5)
    preserving, _ = om.check_measure_preserving()
    assert preserving
    z0 = [1 / math.sqrt(5)] * 5
    report = qeuler.integrate(om, z0, 0.1, 10)
    assert len(report["steps"]) == 11
    lorenz_preserving, _ = qeuler.lorenz().check_measure_preserving()
    assert not lorenz_preserving


def check_plan_and_bounds():
    assert qeuler.plan_resources(1, 1.0)["n0"] == 32
    assert qeuler.plan_resources(2, 0.3)["n0"] == 126420
    gamma = 2 * math.sqrt(2) / 0.5
    assert abs(qeuler.error_bound(1e-4, gamma, 2) - 1.017e-2) < 1e-5
    study = qeuler.noise_study(qeuler.doubling_map(), [1.0], 3, 1e-6, trials=10)
    assert study["bound_violations"] == 0


def check_readout():
    s = qeuler.fourier_spectrum([0.5, 0.5, 0.5, 0.5])
    assert abs(s[-1] - 1.0) < 1e-12
    state, amplitude = qeuler.expectation([0.6, 0.8], [[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert abs(state - 1.0) < 1e-12 and abs(amplitude - 2.0) < 1e-12


def check_experiment():
    with tempfile.TemporaryDirectory() as out:
        config = json.dumps({"system": "doubling", "m": 2, "epsilon": 1.0, "mode": "montecarlo"})
        assert qeuler.run_experiment("iterate", config, out) == 0
        with open(f"{out}/iterate.json") as f:
            report = json.load(f)
        assert report["schema_version"] == 1


def check_errors():
    try:
        qeuler.StepOperator(qeuler.doubling_map(), 5.0)
    except ValueError:
        pass
    else:
        raise AssertionError("epsilon out of range was accepted")


if __name__ == "__main__":
    for check in [
        check_step_matches_map,
        check_doubling_orbit,
        check_custom_map_roundtrip,
        check_integrate,
        check_plan_and_bounds,
        check_readout,
        check_experiment,
        check_errors,
    ]:
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
