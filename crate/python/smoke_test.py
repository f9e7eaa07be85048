"""Smoke test for the `isgc` extension module.

Build it first, e.g.

    cargo build -p isgc-py --release --features extension-module
    cp target/release/libisgc.so python/isgc.so

or install it with `pip install ./crates/py`.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import isgc  # noqa: E402


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    c = isgc.PipelineConstants()
    assert c.get("w_total") == 10.0
    assert isgc.PipelineConstants(t_max=2.0).get("t_max") == 2.0

    state = isgc.EnvState([1.5, 0.0, 0.0, 0.5, 4.0, 0.5, 4.0, 0.4, 7.5, 17.5])
    assert len(isgc.EnvState.FIELDS) == isgc.STATE_DIM == 10

    even = isgc.action_to_allocation([0.0, 0.0, 0.0])
    assert close(even.total(), 10.0)
    assert close(even.w_sem, 10.0 / 3.0)

    lat = isgc.latency(state, even)
    assert close(lat["t_total"], sum(v for k, v in lat.items() if k != "t_total"))
    u = isgc.utility(state, even)
    r = isgc.reward(state, even)
    assert r <= u

    best = isgc.oracle_solve(state)
    assert best["utility_star"] >= u - 1e-9 or not isgc.feasible(state, even)
    assert close(best["alloc"].total(), 10.0)

    states = isgc.sample_states(7, 5)
    assert [s.to_list() for s in states] == [s.to_list() for s in isgc.sample_states(7, 5)]

    with tempfile.TemporaryDirectory() as tmp:
        summary = isgc.train("ppo", os.path.join(tmp, "ppo"), seed=1, epochs=2)
        assert summary["epochs"] == 2 and math.isfinite(summary["mean_reward"])
        policy = isgc.TrainedPolicy.load(os.path.join(tmp, "ppo"))
        allocs = policy.act(states)
        assert all(close(a.total(), 10.0) for a in allocs)
        report = isgc.TrainedPolicy.load("oracle").evaluate(n_states=20, seed=3)
        assert close(report["oracle_ratio"], 1.0)

    try:
        isgc.EnvState([1.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("short state accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
