"""Smoke test for the compiled `multiverse` extension module.

Build and run from the repository root:

    cargo build --release -p multiverse-py --features extension-module
    cp target/release/libmultiverse.so python/multiverse.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import multiverse as mv


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    # two perfectly correlated pipelines: GLS collapses onto one direction
    joint = mv.estimate_one_sample([[1.0, 2.0], [3.0, 5.0]], 0.0, ["a", "b"])
    assert joint.pipelines == ["a", "b"]
    assert close(joint.psi_hat[0], 2.0, 1e-12)
    assert close(joint.correlation()[0][1], 1.0, 1e-12)

    exposure = [i % 2 == 0 for i in range(40)]
    values = [[0.5 * x + 0.1 * j + math.sin(i * (j + 1)) for j in range(3)] for i, x in enumerate(exposure)]
    joint = mv.estimate_two_sample(values, exposure)
    assert len(joint.sigma) == 3 and joint.n == 40

    p, err = mv.rect_prob([[1.0] * 1], [-1.959964], [1.959964])
    assert close(p, 0.95, 1e-6) and err == 0.0
    identity = [[1.0 if i == j else 0.0 for j in range(2)] for i in range(2)]
    assert close(mv.critical_value(identity), 2.2365, 0.005)

    global_p, adjusted = mv.maxtest(joint, seed=3)
    assert 0.0 <= global_p <= 1.0 and len(adjusted) == 3

    pooled = mv.pool_all(joint)
    assert [r.method for r in pooled] == ["average", "pool-se", "gls", "constrained-gls"]
    assert all(close(sum(r.weights), 1.0, 1e-9) for r in pooled)

    sigma = mv.JointEstimates([0.0, 0.0], [[1.0, 1.9], [1.9, 4.0]], 100)
    constrained = mv.pool(sigma, "constrained-gls")
    assert close(constrained.kappa, 0.75, 1e-8)
    assert close(constrained.weights[0], 1.0, 1e-8) and close(constrained.weights[1], 0.0, 1e-8)

    eta = mv.proportion(mv.JointEstimates([0.0] * 4, identity_n(4), 10), 1.959963984540054)
    assert close(eta["eta_parametric"], 0.05, 1e-12)

    weights = mv.scenario_weights("s2")
    assert [round(100 * w) for w in weights["gls"]] == [8, 82, 4, 3, 2, 1]

    csv = mv.simulate(["s2"], [20], [0.0], replicates=5, seed=2, eta=False)
    assert csv.splitlines()[0] == "scenario,n,beta,estimator,bias,sd,rejection_rate,mc_se,eta_mean"

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "in.csv")
        with open(path, "w") as f:
            f.write("subject,pipeline,value\ns1,a,1\ns1,b,2\ns2,a,3\ns2,b,5\n")
        t_c = mv.analyze_file(path, "one-sample", os.path.join(tmp, "out"), reference=0.0)
        assert t_c > 0
        assert sorted(os.listdir(os.path.join(tmp, "out"))) == [
            "forest.svg", "heatmap.svg", "report.csv", "report.jsonl"]

    try:
        mv.pool(sigma, "median")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print("smoke test passed (multiverse %s)" % mv.__version__)


def identity_n(j):
    return [[1.0 if a == b else 0.0 for b in range(j)] for a in range(j)]


if __name__ == "__main__":
    main()
