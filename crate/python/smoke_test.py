"""Smoke test for the qudit_ctrl extension module.

Build the module first (see README), then run `python3 python/smoke_test.py`.
"""

import math
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)

import qudit_ctrl  # noqa: E402

DATA = os.path.join(HERE, "..", "data")
DEVICE = os.path.join(DATA, "table1_device.toml")
HAM = os.path.join(DATA, "h2_1.5A_sto3g_parity_z2.ham")


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok  {msg}")


def main():
    e0 = qudit_ctrl.ground_energy(HAM)
    pops = dict(qudit_ctrl.target_populations(HAM))
    check(abs(pops["01"] / pops["10"] - 6.92) < 0.05, "target population ratio")

    p = qudit_ctrl.Problem(DEVICE, HAM, 10.0, levels=3, n_segments=10, n_trotter=200)
    check(p.dim == 9 and len(p.labels()) == 9, "qutrit dimension")
    check(abs(p.reference_energy - e0) < 1e-12, "reference energy")

    x = p.random_start(1)
    cost, grad = p.value_and_gradient(x)
    h = 1e-6
    for k in (0, 5, len(x) - 1):
        up, dn = list(x), list(x)
        up[k] += h
        dn[k] -= h
        fd = (p.evaluate(up)["total_cost"] - p.evaluate(dn)["total_cost"]) / (2 * h)
        check(abs(fd - grad[k]) <= 1e-5 * max(abs(grad[k]), 1e-3 * max(map(abs, grad))), f"gradient component {k}")

    schedule = p.schedule(x)
    check(p.parameters(schedule) == x, "pack/unpack round trip")
    total = sum(v for _, v in p.final_populations(schedule))
    check(abs(total - 1.0) < 1e-10, "final state normalized")

    q = qudit_ctrl.Problem(DEVICE, HAM, 20.0, n_segments=20, n_trotter=400)
    sched, run = q.optimize(seed=0)
    check(run["success"] and abs(run["energy_error"]) < 1e-8, "qubit optimization at 20 ns")
    cert, csv = q.certify(sched)
    check(0.0 <= cert["sign_agreement"] <= 1.0 and csv.startswith("time_ns,"), "certificate")
    rep = q.dyson(sched, n_quad=400)
    check(rep["channel_sum_error"] < 1e-8 and math.hypot(*rep["first_order"]) < 1e-12, "dyson report")

    try:
        p.evaluate([0.0])
    except ValueError as err:
        check("expected" in str(err), "dimension error raised")
    else:
        raise SystemExit("FAIL: no error on wrong parameter count")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
