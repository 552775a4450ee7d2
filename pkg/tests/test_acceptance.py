"""Acceptance criteria, one PASS/FAIL line each (summary printed at the end of the run).

Run with ``pytest tests/test_acceptance.py -v``; the lines also appear in the
terminal summary of a full ``pytest`` run.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from emgtensor.bayes_mh import (
    DenseObservation,
    TensorObservation,
    chain_stats,
    run_chain,
    speedup_measured,
    speedup_model,
)
from emgtensor.cli import Setup
from emgtensor.config import ExperimentConfig
from emgtensor.emg_forward import assemble_direct, assemble_rhs, node_weights, solve_forward_dense
from emgtensor.ht_solver import PcgConfig
from emgtensor.param_tensorization import (
    evaluate_slice,
    precompute_solution,
    rank_report,
    tensorize_operator,
)
from emgtensor.tensor_core import (
    CpVector,
    CpOperator,
    build_balanced_tree,
    cp_apply,
    ht_from_dense,
    ht_full,
    truncate,
)

from conftest import ACCEPTANCE_LINES
from desk import desk_problem, mms_error
from oracles import hooi

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(n, ok, detail):
    line = f"C{n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# --- shared desk fixtures ------------------------------------------------------------

@pytest.fixture(scope="module")
def desk64():
    """4x4x4 parameter grid, all three directions, default solver settings."""
    model, cond, grid, aff, setup = desk_problem(n_per_axis=4)
    t0 = time.perf_counter()
    sol = precompute_solution(model, aff, grid, PcgConfig(epsilon=1e-4, k_max=15, trunc_tol=1e-6), cond)
    return model, cond, grid, aff, sol, time.perf_counter() - t0


def desk_config(**measurement):
    raw = json.loads((CONFIGS / "desk.json").read_text())
    raw["measurement"].update(measurement)
    return ExperimentConfig.from_dict(raw)


def paired_chains(cfg):
    s = Setup(cfg)
    sol = precompute_solution(s.model, s.aff, s.grid, cfg.pcg_config(), s.cond)
    data = s.synthetic_data(cfg.seed)
    problem = cfg.posterior_problem(data, s.grid)
    sa = run_chain(problem, DenseObservation(s.aff, s.rhs_all(), s.model, s.setup, s.grid), "SA")
    ta = run_chain(problem, TensorObservation(sol, s.model, s.setup), "TA", sol.T_p)
    return problem, sol, sa, ta


@pytest.fixture(scope="module")
def chains():
    t0 = time.perf_counter()
    out = paired_chains(desk_config())
    return (*out, time.perf_counter() - t0)


# --- criteria -------------------------------------------------------------------------

def test_c1_stencil_order():
    t0 = time.perf_counter()
    errs = [mms_error(n) for n in (4, 8, 16, 32)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    dt = time.perf_counter() - t0
    ok = all(3.5 <= r <= 4.5 for r in ratios) and dt < 10
    report(1, ok, f"consistency error ratios {np.round(ratios, 3).tolist()} in [3.5, 4.5], {dt:.1f} s < 10 s")


def test_c2_affine_exactness():
    t0 = time.perf_counter()
    model, cond, grid, aff, _ = desk_problem()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        p = rng.uniform(cond.s_minus, cond.s_plus, 3)
        direct = assemble_direct(model, cond, p).toarray()
        rel = np.abs(direct - aff.assemble(p).toarray()).max() / np.abs(direct).max()
        worst = max(worst, rel)
    dt = time.perf_counter() - t0
    report(2, worst <= 1e-13 and dt < 5, f"max relative entry error {worst:.2e} <= 1e-13 over 20 p, {dt:.2f} s < 5 s")


def test_c3_cp_rank_laws():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    shape = (4, 3, 5)
    A = CpOperator([[rng.standard_normal((n, n)) for n in shape] for _ in range(3)])
    x = CpVector(tuple(rng.standard_normal((n, 2)) for n in shape))
    r_apply = cp_apply(A, x).rank
    model, cond, grid, aff, _ = desk_problem()
    r_op = tensorize_operator(aff, grid, model.t_steps).rank
    dt = time.perf_counter() - t0
    report(3, r_apply == 6 and r_op == 4 and dt < 1,
           f"cp_apply rank {r_apply} == 6, operator CP rank {r_op} == 4, {dt:.2f} s < 1 s")


def test_c4_truncation_quasi_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    tree = build_balanced_tree(3)
    worst = 0.0
    for _ in range(100):
        t = rng.standard_normal((6, 6, 6))
        r = tuple(int(v) for v in rng.integers(1, 6, 3))
        r = tuple(min(r[k], r[(k + 1) % 3] * r[(k + 2) % 3]) for k in range(3))
        ranks = {tree.leaf_of_mode(m): r[m] for m in range(3)}
        # the inner non-root node spans modes {1,2}; its matricization is the one of mode 3
        for t_node in tree.inner_nodes:
            if t_node != tree.root:
                ranks[t_node] = r[[m for m in range(3) if m not in tree.modes[t_node]][0]]
        err = np.linalg.norm(ht_full(truncate(ht_from_dense(t, tree), ranks=ranks)) - t)
        best = hooi(t, r, tol=1e-12)
        worst = max(worst, err / best)
    dt = time.perf_counter() - t0
    report(4, worst <= np.sqrt(3) and dt < 120,
           f"worst HT/best error ratio {worst:.3f} <= sqrt(3) over 100 tensors, {dt:.1f} s < 120 s")


def test_c5_solver_correctness(desk64):
    model, cond, grid, aff, sol, dt = desk64
    t0 = time.perf_counter()
    w = node_weights(model.grid_shape)
    worst, where = 0.0, None
    for d in (1, 2, 3):
        rhs = assemble_rhs(model.with_direction(d))
        for idx in np.ndindex(*grid.sizes):
            ref = solve_forward_dense(aff, rhs, grid.point(idx))
            err = np.linalg.norm(evaluate_slice(sol, d, idx, w) - ref) / np.linalg.norm(ref)
            if err > worst:
                worst, where = err, (d, idx)
    dt += time.perf_counter() - t0
    report(5, worst <= 1e-3 and dt < 600,
           f"worst slice relative error {worst:.2e} (direction {where[0]}, index {where[1]}) "
           f"<= 1e-3 over 3x64 slices, {dt:.1f} s < 600 s")


def test_c6_rank_profile(desk64):
    sol, dt = desk64[4], desk64[5]
    ok, parts = True, []
    for d in (1, 2, 3):
        ranks = {lab: r for dd, lab, r in rank_report(sol) if dd == d}
        param = [ranks[f"{{{m}}}"] for m in (3, 4, 5)]
        space = ranks["{1}"]
        others = [r for lab, r in ranks.items() if lab != "{1}"]
        ok &= max(param) <= 10 and space > max(others)
        parts.append(f"d{d}: param {param} space {space}")
    report(6, ok and dt < 600, "parameter ranks <= 10 and space rank largest; " + "; ".join(parts))


def test_c7_compression(desk64):
    sol = desk64[4]
    ratio = sol.storage() / sol.full_storage()
    report(7, ratio <= 1e-4,
           f"storage {sol.storage()} / full {sol.full_storage()} = {ratio:.2e} <= 1e-4 on the 4x4x4 desk grid")


def test_c7_scaled_analogue():
    """Same spatial problem with 100 values per parameter axis."""
    model, cond, grid, aff, _ = desk_problem(h_sigma=0.1)
    sol = precompute_solution(model, aff, grid, PcgConfig(), cond)
    ratio = sol.storage() / sol.full_storage()
    ACCEPTANCE_LINES.append(f"C7 {'PASS' if ratio <= 1e-4 else 'FAIL'} (scaled analogue, 100^3 parameter "
                            f"grid): storage ratio {ratio:.2e} <= 1e-4")
    assert ratio <= 1e-4


def test_c8_chain_agreement(chains):
    problem, sol, sa, ta, dt = chains
    agree = float(np.mean(sa.accepted[1:] == ta.accepted[1:]))
    s_sa, s_ta = chain_stats(sa, problem.burn_in), chain_stats(ta, problem.burn_in)
    d_rate = abs(s_sa.acceptance_rate - s_ta.acceptance_rate)
    d_mad = float(np.abs(s_sa.mad - s_ta.mad).max())
    d_var = float(np.abs(s_sa.var - s_ta.var).max())
    ok = agree >= 0.99 and d_rate <= 0.005 and d_mad <= 0.05 and d_var <= 0.05 and dt < 1800
    report(8, ok, f"decision agreement {agree:.4f} >= 0.99, rates SA {s_sa.acceptance_rate:.4f} / "
                  f"TA {s_ta.acceptance_rate:.4f}, |dMAD| {d_mad:.2e}, |dVar| {d_var:.2e}, "
                  f"{len(sa)} steps, {dt:.0f} s")


def test_c9_speedup(chains):
    problem, sol, sa, ta, _ = chains
    T_p = sol.T_p
    T_s, T_e = float(np.median(sa.elapsed[1:])), float(np.median(ta.elapsed[1:]))
    J = np.array([125, 250, 500, 1000, 2000, 4000, 8000, 10_000])
    meas = speedup_measured(sa.elapsed, ta.elapsed, T_p, J)
    model = speedup_model(J, T_p, T_s, T_e)
    dev = float(np.max(np.abs(meas / model - 1)))
    ok = T_s / T_e >= 10 and dev <= 0.2
    report(9, ok, f"T_s/T_e = {T_s / T_e:.1f} >= 10 (T_s {T_s * 1e3:.2f} ms, T_e {T_e * 1e6:.1f} us), "
                  f"max curve deviation {dev:.3f} <= 0.2, speedup at J=10^4 {meas[-1]:.2f}")


def test_c10_posterior_sanity():
    t0 = time.perf_counter()
    cfg = desk_config(xi=0.01)
    s = Setup(cfg)
    sol = precompute_solution(s.model, s.aff, s.grid, cfg.pcg_config(), s.cond)
    problem = cfg.posterior_problem(s.synthetic_data(cfg.seed), s.grid)
    chain = run_chain(problem, TensorObservation(sol, s.model, s.setup), "TA", sol.T_p)
    st = chain_stats(chain, problem.burn_in)
    p_ref = np.asarray(cfg.conductivity.p_ref)
    gap = np.abs(st.chain_mean - p_ref)
    modal = int(np.argmax(st.direction_freq)) + 1
    dt = time.perf_counter() - t0
    ok = bool(np.all(gap <= 2 * problem.delta)) and modal == cfg.conductivity.reference_direction and dt < 1800
    report(10, ok, f"|mean - p_ref| = {np.round(gap, 3).tolist()} <= 2 delta = {2 * problem.delta}, "
                   f"modal direction {modal} (true {cfg.conductivity.reference_direction})")


def test_c11_statistics_fixture():
    from emgtensor.bayes_mh import Chain

    p = np.array([[1.0] * 3, [1.0] * 3, [3.0] * 3])
    chain = Chain(np.zeros((3, 3), int), p, np.full(3, 1), np.ones(3, bool), np.zeros(3), np.zeros(3))
    st = chain_stats(chain, 0)
    ok = bool(np.all(np.abs(st.mad - 8 / 9) <= 1e-15) and np.all(np.abs(st.var - 4 / 3) <= 1e-15))
    report(11, ok, f"MAD {float(st.mad[0])!r} == 8/9, Var {float(st.var[0])!r} == 4/3 to 1e-15")
