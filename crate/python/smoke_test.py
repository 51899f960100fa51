"""Smoke test for the posjump extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
Then run from the repository root:  python python/smoke_test.py
"""

import math
import pathlib

import posjump

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def main() -> None:
    model = posjump.Model.load(str(FIXTURES / "controller_failure.json"))
    assert model.kind == "semi_markov", model.kind
    model.validate()

    model.set_parameter("a", 0.9)
    report = model.analyze(degree=1)
    assert abs(report["indicator"] - 0.68478) < 1e-4, report["indicator"]
    assert report["verdict"] == "stable"

    table = model.sweep("a", 0.8, 1.2, 0.05, degree=1)
    (lo, hi), = table["crossings"]
    assert lo <= 1.035 <= hi + 1e-3, (lo, hi)

    model.set_parameter("a", 1.0)
    path = model.simulate(horizon=5.0, dt=0.05, seed=3)
    assert len(path["t"]) == len(path["x"]) == 101
    assert all(v >= 0.0 for x in path["x"] for v in x)
    assert path == model.simulate(horizon=5.0, dt=0.05, seed=3)

    fast = posjump.Model.load(str(FIXTURES / "feedback_fast_design.json"))
    eta = fast.analyze()["indicator"]
    assert abs(eta + 0.1936) < 1e-3, eta

    stats = posjump.Model.load(str(FIXTURES / "markov_two_mode.json")).mean_norm(
        horizon=1.0, paths=200, seed=1, norm="manhattan"
    )
    assert len(stats["mean"]) == len(stats["times"])

    x = [0.3, 1.2]
    lifted = posjump.lift_vector(x, 3)
    assert math.isclose(math.hypot(*lifted), math.hypot(*x) ** 3, rel_tol=1e-12)
    a = posjump.lift_matrix([[-1.0, 0.5], [0.2, -2.0]], 2, infinitesimal=True)
    assert all(a[i][j] >= 0 for i in range(3) for j in range(3) if i != j)
    assert posjump.spectral_indicator([[0.5, 0.0], [0.0, 0.25]]) == 0.5

    try:
        model.set_parameter("nope", 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown parameter accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
