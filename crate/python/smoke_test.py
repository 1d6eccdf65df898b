"""Smoke test for the kcontrast extension module."""

import math
import os
import tempfile

import kcontrast


def main():
    p = kcontrast.simulate("S3", 7)
    mu = math.exp(2) * (math.exp(6) - 1) / 6
    assert abs(len(p) - mu) < 5 * math.sqrt(mu), len(p)
    assert p.window == [0.0, 1.0, 0.0, 1.0]
    assert p.t is None

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "p.csv")
        p.write_csv(path)
        q = kcontrast.Pattern.read_csv(path)
        assert q.x == p.x and q.y == p.y

    k = kcontrast.k_function(p, "inhomogeneous", model="exp(a+b*x)", theta=[2.0, 6.0], n_r=20)
    assert len(k["values"]) == 20 and k["h"] is None

    fit = kcontrast.fit(p, "exp(a+b*x)", seed=3)
    assert len(fit["theta_hat"]) == 2 and fit["converged"]
    pen = kcontrast.fit(p, "exp(a+b*x)", seed=3, penalty_r=1.0)
    c = pen["penalty"]["center"]
    d = math.dist(pen["theta_hat"], c)
    assert 0 < d <= 1 + 1e-6, d

    sel = kcontrast.select_r(p, "exp(a+b*x)", seed=1, truth=[2.0, 6.0], r_grid=[0.5, 1.0, 2.0], n_r=40, restarts=2)
    assert sel["chosen_R"] in (0.5, 1.0, 2.0)

    field = kcontrast.residual_field(p, "exp(a+b*x)", [2.0, 6.0], cells=16)
    assert len(field["field"]["values"]) == 256

    pts = kcontrast.Pattern([0.1, 0.5, 0.9], [0.2, 0.4, 0.6])
    assert len(pts) == 3
    try:
        kcontrast.simulate("S9", 1)
    except ValueError:
        pass
    else:
        raise AssertionError("bad scenario accepted")

    study = kcontrast.mc_study("S2", 20, 1)
    assert study["summary"][0]["param"] == "beta"

    print("smoke test ok:", len(p), "points, theta_hat", [round(v, 3) for v in fit["theta_hat"]])


if __name__ == "__main__":
    main()
