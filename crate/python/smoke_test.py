"""Smoke test for the pam_conductance extension module."""

import math

import numpy as np

import pam_conductance as pam


def main():
    line = pam.Lattice(1, 8)
    assert line.site_count == 17 and line.edge_count == 16
    assert line.coords(line.origin_site) == [0]

    field = pam.Field.generate(line, {"law": "iid_discrete", "values": [0.5, 2.0], "probs": [0.5, 0.5]}, 3)
    again = pam.Field.from_csv(field.to_csv())
    assert again.rates == field.rates
    lo, hi = field.bounds
    assert 0.5 <= lo <= hi <= 2.0

    flat = pam.Field.constant(line, 1.0)
    op = pam.white_noise_operator(flat, 2)
    dense = np.array(op.to_dense())
    assert np.allclose(dense, dense.T)
    top = op.top_eigenvalue()
    assert top["converged"]
    assert abs(top["lambda_max"] - np.linalg.eigvalsh(dense).max()) < 1e-8

    degenerate = pam.white_noise_operator(flat, 3, degenerate=True).top_eigenvalue()
    assert abs(degenerate["lambda_p"] - 1.0) < 1e-12

    sweep = pam.kappa_sweep(1, 6, 2, [0.5, 1.0, 2.0])
    assert all(d < 0 for d in sweep["first_differences"])

    try:
        pam.white_noise_operator(pam.Field.constant(pam.Lattice(2, 10), 1.0), 3, max_dim=100)
    except pam.BudgetError:
        pass
    else:
        raise AssertionError("budget not enforced")

    path = pam.simulate_path(field, 1.0, seed=5)
    assert pam.girsanov_log_weight(path, field, field) == 0.0

    m = pam.annealed_moment(flat, {"dynamics": "white_noise"}, 2, 2.0, 2000, 1)
    assert math.isfinite(m["log_value"]) and m["std_error"] > 0

    g = pam.green_function(3, 10)
    assert 0.2 < g["g0"] < 0.26
    assert pam.green_function(1, 10)["g0"] is None

    ring = pam.Lattice(1, 2, "periodic")
    assert pam.detailed_balance_residual(0.5, ring) < 1e-12
    env = {"kind": "spin_flip", "beta": 0.5, "env_box": {"dim": 1, "radius": 8, "geometry": "periodic"}, "seed": 2}
    events = pam.environment_events(env, 1.0)
    assert events.splitlines()[0].startswith("time,kind")
    q = pam.quenched_exponent(flat, env, {"t_grid": [1.0, 2.0], "dt": 0.01, "realizations": 4, "seed": 1})
    assert len(q["exponents"]) == 2

    print("pam_conductance smoke test passed")


if __name__ == "__main__":
    main()
