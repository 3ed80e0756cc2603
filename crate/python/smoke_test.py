"""Smoke test for the causal_py extension module.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml --features extension-module`,
or copy target/release/libcausal_py.so to causal_py.so on PYTHONPATH.
"""

import math
import random

import causal_py as cp


def observational(n=2000, seed=1):
    rng = random.Random(seed)
    y, d, x = [], [], []
    for _ in range(n):
        x1, x2 = rng.gauss(0, 1), rng.gauss(0, 1)
        p = 1 / (1 + math.exp(-(0.5 * x1 - 0.3 * x2)))
        t = 1.0 if rng.random() < p else 0.0
        y.append(1 + 2 * t + x1 + 0.5 * x2 + rng.gauss(0, 1))
        d.append(t)
        x.append([x1, x2])
    return cp.Dataset(y, d, x)


def main():
    ds = observational()
    assert ds.n == 2000 and ds.n_covariates == 2 and ds.is_binary

    for fn in (cp.ate_or, cp.ate_ipw, cp.ate_dr, cp.ate_psr, cp.ate_stratification, cp.ate_matching):
        est = fn(ds)
        assert abs(est.point - 2.0) < 0.3, (fn.__name__, est)
        print(f"{fn.__name__:>20}: {est.point:.3f}")

    boot = cp.bootstrap(ds, "dr", replicates=100, seed=42)
    lo, hi = boot.ci
    assert lo < boot.point < hi and boot.variance > 0

    t = [-1 + 2 * (i + 0.5) / 200 for i in range(200)]
    y = [1 + 2 * v + (5 if v >= 0 else 0) for v in t]
    assert abs(cp.rdd_sharp(y, t).point - 5.0) < 1e-8

    iv = cp.iv_ratio([1.0, 3.0], [0.0, 1.0], [0.0, 1.0])
    assert abs(iv.point - 2.0) < 1e-12

    try:
        cp.difference_in_means(cp.Dataset([1.0, 2.0], [1.0, 1.0]))
    except cp.CausalError as e:
        print("expected error:", e)
    else:
        raise AssertionError("one-arm data must fail")

    assert cp.case_methods("cs5") == ["DID1", "DID2"]
    report = cp.simulate("cs5", runs=50, n=500, seed=42)
    summary = report.summary()
    assert abs(summary["DID1"]["av_est"] + 4.0) < 0.1
    assert len(report.estimates("DID1")) == 50
    assert report.to_csv().startswith("method,av_est,emp_var,mse")
    again = cp.simulate("cs5", runs=50, n=500, seed=42, jobs=1)
    assert again.runs_csv() == report.runs_csv()
    print(report)
    print("smoke test passed")


if __name__ == "__main__":
    main()
