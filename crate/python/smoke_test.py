"""Smoke test for the fpk_reset_py extension.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/python

then run `python python/smoke_test.py` from the repository root.
"""

import math
import tempfile

import fpk_reset_py as fr


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def first_passage():
    model = fr.Model.brownian_reset(1.0)
    check(model.terminal_states == ["hit", "escaped"], "brownian terminals")
    solver = fr.Solver(model, 400)
    density = solver.initial_state(model)
    solver.evolve_to(density, 1.0, solver.stability_bound())
    hit = density.terminal[0]
    exact = fr.analytic_first_passage(1.0, 1.0)
    check(abs(hit - exact) < 5e-3, f"PDE hit mass {hit:.5f} vs {exact:.5f}")
    check(abs(density.total_mass() - 1.0) < 1e-8, "mass conserved")

    measure = fr.simulate(model, 4000, 1.0, 1e-3, seed=1)
    snap = measure["snapshots"][0]
    q = snap["terminal_counts"][0] / measure["ensemble_size"]
    se = math.sqrt(exact * (1 - exact) / measure["ensemble_size"])
    check(abs(q - exact) <= 3 * se + 2e-2, f"MC hit fraction {q:.4f}")
    again = fr.simulate(model, 4000, 1.0, 1e-3, seed=1)
    check(again == measure, "same seed, same ensemble")


def thermostat():
    model = fr.Model.thermostat({"gamma": [0.5], "margin": 3.0})
    drift, diffusion = model.ito_coefficients(0, [20.0])
    check(abs(drift[0] + 5.0) < 1e-12 and abs(diffusion[0] - 0.25) < 1e-12, "thermostat coefficients")
    density = fr.Solver(model, 80).stationary_state()
    masses = [density.mode_mass(q) for q in range(len(model.modes))]
    check(abs(sum(masses) - 1.0) < 1e-8 and min(masses) > 0.1, f"stationary mode masses {masses}")


def ruin():
    model = fr.Model.first_exit(0.0, 1.0)
    solver = fr.Solver(model, 100)
    density = solver.initial_state(model, {"point": {"mode": 0, "position": [0.3]}})
    solver.evolve_to(density, 5.0, solver.stability_bound())
    left = density.terminal[model.terminal_states.index("left")]
    check(abs(left - fr.exit_left_probability(0.3, 0.0, 1.0)) < 1e-2, f"exit at the left end {left:.4f}")


def errors():
    try:
        fr.Model.thermostat({"gama": [0.5]})
    except ValueError as e:
        check("gama" in str(e), "unknown parameter rejected")
    else:
        raise SystemExit("FAIL unknown parameter accepted")


def config_run():
    with tempfile.TemporaryDirectory() as out:
        result = fr.run_config(
            {
                "scenario": "first_exit",
                "resolution": 60,
                "horizon": 1.0,
                "ensemble_size": 2000,
                "dt": 1e-4,
                "output_dir": out,
            },
            validate=True,
        )
        check(result["exit_code"] == 0, "validate run passes")
        check(len(result["report"]["metrics"]) > 0, "report has metrics")


if __name__ == "__main__":
    first_passage()
    thermostat()
    ruin()
    errors()
    config_run()
    print("all smoke checks passed")
