"""Smoke test of the qhedge extension module: build with
`pip install --no-build-isolation -e crates/python`, then run this file."""

import json
import math

import qhedge


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    problem = qhedge.Problem.put_example()
    assert problem.dates == [0.0, 1 / 3, 2 / 3, 1.0]
    cfg = json.loads(problem.to_json())
    cfg["grid"].update(nx=81, nq=161, np=161)
    small = qhedge.Problem.from_json(json.dumps(cfg))
    sol = small.solve()

    v0 = sol.price(0.0, 30.0, 0.0)
    v9 = sol.price(0.0, 30.0, 0.9)
    v1 = sol.price(0.0, 30.0, 1.0)
    assert v0 == 0.0 and v0 < v9 < v1, (v0, v9, v1)
    bs = qhedge.black_scholes_put(30.0, 30.0, 0.25, 1.0)
    assert close(v1, 2.98, 0.03) and close(v1 / bs, 1.0, 0.01), (v1, bs)

    x = sol.x_grid
    rows = sol.primal_slice(0.0)
    assert len(rows) == len(x) and len(rows[0]) == len(sol.p_grid)
    assert all(r[0] == 0.0 for r in rows)
    w = sol.dual_slice(0.0)
    q = sol.q_grid
    assert all(0.0 <= w[j][k] <= q[k] + 1e-9 for j in range(len(x)) for k in range(len(q)))

    regions = {r[0] for r in sol.facelift(1 / 3)}
    assert regions <= {"A1", "A2", "A3"} and "A2" in regions and "A3" in regions

    pmin, tol = sol.pmin(0.0, 30.0)
    assert 0.0 < pmin < 1.0 and tol >= 0.0

    freq, se, threshold = sol.success_probability(0.0, 30.0, 0.75, 20_000, 1)
    assert freq >= 0.75 - 3 * se - 0.05 and threshold > 0.0

    csv = sol.surface_csv("v", 0.0).splitlines()
    assert csv[0] == "t,x,p,v" and len(csv) == 1 + len(x) * len(sol.p_grid)
    try:
        sol.surface_csv("covl", 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("covl exists only at exercise dates")

    eu = qhedge.european_put_price(0.25, 0.2, 1.0, 30.0, 30.0, 0.9)
    assert close(eu, 1.5376, 1e-3), eu

    grid = [i / 10 for i in range(11)]
    f = [(g - 0.4) ** 2 for g in grid]
    dual = [-2.0 + 0.5 * i for i in range(9)]
    fs = qhedge.fenchel_transform(grid, f, dual)
    assert all(fs[i] + f[k] >= dual[i] * grid[k] - 1e-12 for i in range(9) for k in range(11))
    assert qhedge.convex_envelope(grid, [math.sin(7 * g) for g in grid])[0] <= math.sin(0.0) + 1e-12

    qs = [float(k) for k in range(41)]
    post, region = qhedge.obstacle_section(qs, [0.5 * k for k in qs[:21]] + [k - 10 for k in qs[21:]], 3.0)
    assert len(post) == 41 and region in {"A1", "A2", "A3"}

    try:
        qhedge.Problem.from_json(json.dumps({**cfg, "typo": 1}))
    except ValueError as e:
        assert "typo" in str(e)
    else:
        raise AssertionError("unknown keys must be rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
