import json

import mpmath as mp
import numpy as np
import pytest

from kel.errors import (DegenerateSeries, DriftDifferenceOutsideRange, NonPositiveValue,
                        NotStationary, ValidationError)
from kel.experiments import (ExperimentReport, entropy_cost_bound, config_hash, coupling_contraction,
                             ergodicity_experiment, rate_fit, resolve_config, run_experiment,
                             shift_drift, shorttime_scaling, verify_entropy_inequality_gaussian)
from kel.gaussian import GaussianState
from kel.model import chain, kappa, kinetic_ou


def kinetic_shift_margin_mp(delta, t, digits=40):
    """bound - KL for the shifted kinetic pair from a point mass, in high precision."""
    with mp.workdps(digits):
        F = mp.matrix([[0, 1], [-1, -1]])
        GG = mp.matrix([[0, 0], [0, 2]])
        vl = mp.zeros(4, 4)
        for i in range(2):
            for j in range(2):
                vl[i, j] = -F[i, j]
                vl[i, j + 2] = GG[i, j]
                vl[i + 2, j + 2] = F[j, i]
        E = mp.expm(vl * t)
        Phi = E[2:4, 2:4].T
        S = Phi * E[0:2, 2:4]
        aug = mp.zeros(3, 3)
        aug[0, 1], aug[1, 0], aug[1, 1], aug[1, 2] = 1, -1, -1, delta
        dm = (mp.expm(aug * t) * mp.matrix([0, 0, 1]))[0:2, 0]
        kl = (dm.T * mp.inverse(S) * dm)[0] / 2
        return float(mp.mpf(delta) ** 2 * t / 4 - kl)


# entropy-cost bound

def test_bound_examples():
    m = kinetic_ou()
    assert entropy_cost_bound(m, m, 1.0) == 0.0
    for t in (0.1, 1.0, 3.0):
        assert entropy_cost_bound(shift_drift(m, block2=0.5), m, t) == pytest.approx(0.0625 * t, rel=1e-12)
    with pytest.raises(DriftDifferenceOutsideRange):
        entropy_cost_bound(shift_drift(m, block1=0.5), m, 1.0)
    with pytest.raises(ValidationError):
        entropy_cost_bound(m, m, 0.0)


def test_inequality_identical_models():
    m = kinetic_ou()
    rep = verify_entropy_inequality_gaussian(m, m, GaussianState.point([0.0, 0.0]), [0.5, 1.0])
    assert np.all(rep.series("kl_exact")[1] == 0) and np.all(rep.series("bound")[1] == 0)


def test_inequality_shifted_pair():
    m = kinetic_ou()
    grid = np.linspace(0.1, 5, 50)
    rep = verify_entropy_inequality_gaussian(shift_drift(m, block2=0.5), m,
                                             GaussianState.point([0.0, 0.0]), grid)
    assert rep.summary["passed"] and rep.summary["min_margin"] > 0
    assert np.all(rep.series("ratio")[1] <= 1)


def test_inequality_sweep_and_high_precision_margin():
    rep = run_experiment("entropy-inequality")
    assert rep.passed and rep.summary["min_margin"] > 0
    t, margin = rep.series("margin[delta=0.1]")
    oracle = kinetic_shift_margin_mp(0.1, float(t[0]))
    assert oracle == pytest.approx(3.47305e-11, rel=1e-5)
    assert margin[0] == pytest.approx(oracle, rel=1e-3)
    for ti, mi in zip(t[::10], margin[::10]):
        assert mi == pytest.approx(kinetic_shift_margin_mp(0.1, float(ti)), rel=1e-3)


# short-time scaling

GRID = np.geomspace(1e-3, 1e-2, 12)


def test_shorttime_kinetic_slopes():
    pos = shorttime_scaling(kinetic_ou(), [0, 0], [1, 0], GRID)
    vel = shorttime_scaling(kinetic_ou(), [0, 0], [0, 1], GRID)
    assert pos.summary["slope"] == pytest.approx(-3, abs=0.3) and pos.summary["passed"]
    assert vel.summary["slope"] == pytest.approx(-1, abs=0.3) and vel.summary["expected_slope"] == -1
    with pytest.raises(ValidationError):
        shorttime_scaling(kinetic_ou(), [0, 0], [0, 0], GRID)


def test_shorttime_chain_far_coordinate():
    rep = shorttime_scaling(chain(), [0, 0, 0], [1, 0, 0], GRID)
    assert rep.summary["kalman_index"] == 1 and rep.summary["expected_slope"] == -7
    # the exact kernel KL of this chain decays like t^-5, not t^-7
    assert rep.summary["slope"] == pytest.approx(-5, abs=0.05)


@pytest.mark.parametrize("model,x,y", [(kinetic_ou(), [0, 0], [1, 0]), (kinetic_ou(), [0, 0], [0, 1]),
                                       (chain(), [0, 0, 0], [1, 0, 0])])
def test_shorttime_slope_stable_under_half_step_shift(model, x, y):
    step = np.log(GRID[1] / GRID[0])
    shifted = GRID * np.exp(step / 2)
    a = shorttime_scaling(model, x, y, GRID).summary["slope"]
    b = shorttime_scaling(model, x, y, shifted).summary["slope"]
    assert abs(a - b) <= 0.1


# rate fits

def test_rate_fit_examples():
    t = np.linspace(0, 5, 30)
    assert rate_fit(t, np.exp(-2 * t)).slope == pytest.approx(-2, abs=1e-10)
    tt = np.geomspace(0.1, 10, 20)
    assert rate_fit(tt, tt**-3.0, mode="loglog").slope == pytest.approx(-3, abs=1e-10)
    flat = rate_fit(t, np.full(30, 0.7))
    assert flat.slope == 0 and flat.r2 == 0
    w = rate_fit(t, np.exp(-t), window=(1, 2))
    assert w.n == np.sum((t >= 1) & (t <= 2))


def test_rate_fit_errors():
    with pytest.raises(NonPositiveValue):
        rate_fit([0, 1, 2, 3], [1, 0.5, 0.0, 0.1])
    with pytest.raises(ValidationError):
        rate_fit([0, 1, 2], [1, 2, 3])
    with pytest.raises(ValidationError):
        rate_fit([0, 1, 2, 3], [1, 2, 3, 4], mode="cubic")


# couplings

SMALL = dict(N=400, h=1e-2, T=10.0, record_every=0.1)


def test_same_point_coupling_is_degenerate():
    with pytest.raises(DegenerateSeries):
        coupling_contraction(coupling="same-point", x_mean=(0, 0), y_mean=(0, 0), y_std=1.0, **SMALL)


def test_uncoupled_kinetic_pair_rate():
    rep = coupling_contraction(theta=0.0, **SMALL)
    # difference ODE eigenvalues -1/2 +- i sqrt(3)/2: squared distance decays at rate 1
    assert rep.summary["rate"] == pytest.approx(1.0, abs=0.15)
    assert rep.summary["rate"] >= 2 * 0.9 * kappa(1.0, 0.0, 0.0)
    assert rep.passed


def test_coupling_pass_flag_invariant_to_doubling():
    flags = [coupling_contraction(**{**SMALL, "N": n}).passed for n in (1000, 2000)]
    assert flags[0] == flags[1] is True


def test_reports_reproduce_from_config_echo():
    rep = run_experiment("coupling-contraction", {"N": 200, "T": 4.0, "h": 1e-2, "seed": 3})
    cfg = {k: v for k, v in rep.config.items() if k != "experiment"}
    again = run_experiment("coupling-contraction", cfg)
    assert rep.to_json() == again.to_json() and rep.to_csv() == again.to_csv()
    threaded = run_experiment("coupling-contraction", {**cfg, "threads": 3})
    assert threaded.to_json() == rep.to_json()


def test_ergodicity_small_run_and_audit():
    rep = ergodicity_experiment(N=512, h=1e-2, T=10.0, record_every=0.5)
    s = rep.summary
    assert s["stationary"] and np.isfinite(s["w2_rate"]) and s["floor"] > 0
    assert rep.series("w2_sq")[0].size == 21
    with pytest.raises(NotStationary):
        ergodicity_experiment(N=256, h=1e-2, T=0.5, record_every=0.1, start=(20.0, 0.0))


def test_ergodicity_from_equilibrium_stays_at_floor():
    from kel.model import granular
    from kel.sde import simulate
    from kel.transport import w2_exact

    model = granular(1.0, 0.05)
    eq = simulate(model, np.array([0.0, 0.0]), 512, 1e-2, [10.0], seed=1, stream=1)[0].states
    later = simulate(model, eq, h=1e-2, t_grid=[1.0, 2.0, 3.0], seed=2)
    ref = simulate(model, np.array([0.0, 0.0]), 512, 1e-2, [10.0], seed=5, stream=1)[0].states
    floor = w2_exact(eq, ref).value
    assert all(w2_exact(s.states, ref).value <= 1.5 * floor for s in later)


# config and reports

def test_config_resolution():
    cfg = resolve_config("gramian-scaling", {"num": 9})
    assert cfg["num"] == 9 and cfg["t"] == 1.0
    with pytest.raises(ValidationError):
        resolve_config("gramian-scaling", {"bogus": 1})
    with pytest.raises(ValidationError):
        resolve_config("nope")
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_report_serialisation(tmp_path):
    rep = ExperimentReport("demo", {"x": 1}, 7, [0.0, 1.0])
    rep.add(0.0, "q", 1.0, 0.1)
    rep.add(1.0, "q", 0.5)
    rep.summary = {"passed": True}
    d = json.loads(rep.to_json())
    assert d["schema_version"] == 1 and d["records"][1]["stderr"] is None
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("# experiment=demo") and f"config_hash={config_hash({'x': 1})}" in lines[0]
    assert lines[1:] == ["t,quantity,value,stderr", "0.0,q,1.0,0.1", "1.0,q,0.5,"]
    paths = rep.write(tmp_path / "a", svg=True)
    again = rep.write(tmp_path / "b", svg=True)
    for p, q in zip(paths, again):
        assert p.read_bytes() == q.read_bytes()
    rep.add(2.0, "q", float("nan"))
    with pytest.raises(ValidationError):
        rep.to_json()


@pytest.mark.parametrize("name", ["entropy-inequality", "shorttime-scaling", "gramian-scaling"])
def test_deterministic_experiments_are_finite_and_echo_config(name):
    rep = run_experiment(name)
    d = json.loads(rep.to_json())
    assert d["config"] == rep.config and d["config"]["experiment"] == name
    assert all(np.isfinite(r["value"]) for r in d["records"])


def test_report_matches_shipped_schema():
    from importlib.resources import files

    schema = json.loads(files("kel").joinpath("report_schema.json").read_text())
    d = run_experiment("shorttime-scaling").to_dict()
    assert set(d) == set(schema["required"]) == set(schema["properties"])
    assert d["schema_version"] == schema["properties"]["schema_version"]["const"]
    rec_keys = set(schema["properties"]["records"]["items"]["required"])
    assert all(set(r) == rec_keys for r in d["records"])
