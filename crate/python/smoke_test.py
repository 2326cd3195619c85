"""Smoke test for the pavi_py extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/pavi_py-*.whl
"""

import math

import pavi_py


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    target = pavi_py.Potential.quadratic([2.0, 1.0, 1.0, 2.0], [1.0, -1.0])
    assert target.dim == 2
    assert target.constants() == (1.0, 3.0, 0.0)
    assert close(target.value([2.0, 0.0]), 3.0, 1e-12)
    assert close(target.partial(0, [2.0, 0.0]), 3.0, 1e-12)

    assert pavi_py.corollary_schedule(1.0, 16) == (0.5, 2)
    try:
        pavi_py.validate(target, 8, step_size=0.5, batch=1)
    except ValueError as err:
        assert "B*alpha/(4L^2)" in str(err)
    else:
        raise AssertionError("guard violation was accepted")

    assert close(pavi_py.w2_1d([1.0, 3.0], [0.0, 2.0]), 1.0, 1e-15)
    assert close(pavi_py.w2_product([[1.0, 3.0], [0.0, 0.0]], [[0.0, 2.0], [1.0, 1.0]]), math.sqrt(2.0), 1e-15)
    assert close(pavi_py.w2_to_gaussian([0.5], -1.0, 2.0), math.sqrt(4.25), 1e-12)

    # d/dx0 V = 2 (x0 - 1) + (x1 + 1), averaged over x1 in {0, 1} with x0 = 1
    contexts = [[9.0, 0.0], [-4.0, 1.0]]
    assert close(pavi_py.stochastic_grad(target, contexts, 0, 1.0), 1.5, 1e-15)

    solution = pavi_py.gaussian_mfvi_solution(target)
    assert solution == [(1.0, 0.5), (-1.0, 0.5)]

    result = pavi_py.run(target, particles=512, iterations=600, seed=3, metrics_every=10)
    summary = result["summary"]
    assert len(result["w2"]) == 61
    assert summary["steady_state_mean"] < result["w2"][0]
    assert len(result["final_particles"]) == 2 and len(result["final_particles"][0]) == 512
    print("gaussian run: steady-state W2 %.4f, h = %.4f, B = %d"
          % (summary["steady_state_mean"], result["step_size"], result["batch"]))

    perturbed = pavi_py.Potential.perturbed_quadratic([2.0, 0.5, 0.5, 2.0], [0.0, 0.0], [1.0, 1.0])
    oracle = pavi_py.grid_oracle(perturbed, grid_points=257)
    assert oracle["residual"] < 1e-8
    variance = oracle["marginals"][0]["variance"]
    assert 0.0 < variance < 1.0 / perturbed.constants()[0]
    print("perturbed oracle: %d sweeps, marginal variance %.5f" % (oracle["sweeps"], variance))

    series = [(float(n), 0.9 ** n + 0.01) for n in range(400)]
    rate, level = pavi_py.rate_fit(series)
    assert close(rate, 0.9, 1e-6) and close(level, 0.01, 1e-6)

    try:
        pavi_py.gaussian_mfvi_solution(perturbed)
    except NotImplementedError:
        pass
    else:
        raise AssertionError("non-Gaussian potential returned a closed form")

    print("smoke test passed")


if __name__ == "__main__":
    main()
