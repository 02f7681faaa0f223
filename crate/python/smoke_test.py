"""Smoke test for the Python extension: build with
`pip install --no-build-isolation ./crates/python`, then run this file."""

import json
import math
import os
import tempfile

import unstable_sysid as us


def main():
    sys = us.System([[0.5, 0.0], [0.0, 0.8]])
    assert sys.dim == 2
    assert sys.regime() == "stable"
    states = sys.simulate(200, 7)
    assert len(states) == 201 and len(states[0]) == 2
    assert states == sys.simulate(200, 7)

    est = us.estimate(states)
    assert est["n"] == 200
    direct = sys.estimate(200, 7)
    assert math.isclose(direct["a_hat"][0][0], est["a_hat"][0][0], rel_tol=1e-12)
    assert direct["error"] < 0.5

    # Noiseless explosive scalar: two states pin a0 exactly.
    clean = us.System([[2.0]], noise_sqrt=[[0.0]], x0=[1.0])
    assert math.isclose(us.estimate(clean.simulate(3, 0))["a_hat"][0][0], 2.0, rel_tol=1e-14)

    report = us.System([[2.0]]).bounds(1e-3, 0.1)
    assert report["regime"] == "explosive" and report["sample_size"] > 0

    assert us.regularity_check([[2.0, 1.0], [0.0, 2.0]])
    assert not us.regularity_check([[2.0, 0.0], [0.0, 2.0]])
    m, a1, a2 = us.stable_explosive_split([[0.5, 0.3], [0.0, 2.0]])
    assert math.isclose(a1[0][0], 0.5) and math.isclose(a2[0][0], 2.0)

    comp = us.companion_embed([[[0.5]], [[0.2]]])
    assert comp == [[0.5, 0.2], [1.0, 0.0]]
    k = us.lyap_solve([[0.5]], [[1.0]])
    assert math.isclose(k[0][0], 1 / 0.75)
    assert 0.0 <= us.bernstein_bound(2, 10.0, 1.0, 5.0) <= 1.0
    assert 0.0 <= us.azuma_bound(2, 10.0, 5.0) <= 1.0

    mixed = us.System.from_json(json.dumps(
        {"jordan": {"blocks": [[0.5, 0.0, 1], [2.0, 0.0, 1]], "similarity": "random"}}
    ))
    assert mixed.regime() == "general"

    with tempfile.TemporaryDirectory() as out:
        cfg = {
            "system": {"a0": [[2.0]]},
            "n_grid": [8, 12, 16, 20],
            "trials": 60,
            "epsilon": 1e-3,
            "delta": 0.1,
            "master_seed": 5,
            "outputs": out,
            "compute_bounds": False,
        }
        res = us.run_montecarlo(json.dumps(cfg))
        summary = res["summary"]
        assert set(summary) == {"config_hash", "seed", "per_n", "slope", "prescribed_n"}
        assert len(summary["per_n"]) == 4
        assert abs(summary["slope"] + math.log(2)) < 0.2 * math.log(2)
        assert os.path.exists(res["campaign_csv"])

    assert us.cli(["frobnicate"]) == 2
    print("smoke test passed")


if __name__ == "__main__":
    main()
