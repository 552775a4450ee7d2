"""Command-line driver: ``emgtensor <forward|precompute|sample|bench> --config path``."""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
import scipy.sparse.linalg as spla

from .bayes_mh import (
    DenseObservation,
    TensorObservation,
    chain_stats,
    rng_streams,
    run_chain,
    speedup_measured,
    speedup_model,
    timing_summary,
    write_chain_csv,
    write_stats_json,
)
from .config import ExperimentConfig
from .emg_forward import (
    DenseForward,
    add_noise,
    affine_decomposition,
    assemble_rhs,
    electrode_nodes,
    solve_forward_dense,
)
from .errors import ConfigError, InvalidArgument, MissingArtifact, NumericalFailure
from .param_tensorization import (
    DIRECTIONS,
    load_solution,
    model_hash,
    precompute_solution,
    rank_report,
    save_solution,
    singular_value_report,
)

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4
logger = logging.getLogger("emgtensor")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


class Setup:
    """Objects shared by the commands, built once from the config."""

    def __init__(self, cfg, h_M=None):
        self.cfg = cfg
        self.model = cfg.muscle_model(h_M=h_M)
        self.cond = cfg.conductivity_spec()
        self.grid = cfg.parameter_grid()
        self.setup = cfg.measurement_setup(self.model)
        self.aff = affine_decomposition(self.model, self.cond, cfg.a0_center(self.grid))
        self._rhs = {}

    def rhs(self, direction):
        if direction not in self._rhs:
            self._rhs[direction] = assemble_rhs(self.model.with_direction(direction),
                                                pinned=self.aff.pinned)
        return self._rhs[direction]

    def rhs_all(self):
        return {d: self.rhs(d) for d in DIRECTIONS}

    def synthetic_data(self, seed):
        """Observation at p_ref in the reference direction plus Gaussian noise."""
        cfg = self.cfg
        d = cfg.conductivity.reference_direction
        clean = DenseForward(self.aff, {d: self.rhs(d)}, self.model, self.setup)(cfg.p_ref, d)
        return add_noise(clean, self.setup.xi, rng_streams(seed)["noise"])


def cmd_forward(cfg, out, p=None, direction=None, t_index=None):
    s = Setup(cfg)
    p = s.cond.check(cfg.p_ref if p is None else p)
    direction = cfg.conductivity.reference_direction if direction is None else direction
    if direction not in DIRECTIONS:
        raise InvalidArgument("direction must be 1, 2 or 3")
    T = s.model.t_steps
    t_index = T - 1 if t_index is None else t_index
    if not 0 <= t_index < T:
        raise InvalidArgument(f"time index {t_index} outside 0..{T - 1}")
    rhs = s.rhs(direction)
    phi = solve_forward_dense(s.aff, rhs, p)
    b = rhs.rhs(p)
    # the zero-mean shift adds a constant, which the operator maps to the pinned row only
    resid = s.aff.assemble(p) @ (phi - phi[s.aff.pinned]) - b
    bn = np.linalg.norm(b)
    rel = float(np.linalg.norm(resid) / bn) if bn > 0 else float(np.linalg.norm(resid))
    os.makedirs(out, exist_ok=True)
    coords = s.model.coords()
    _write_rows(os.path.join(out, "field.csv"), ["node_index", "x", "y", "z", "value"],
                ([i, *(_fmt(c) for c in coords[i]), _fmt(phi[i, t_index])] for i in range(len(coords))))
    nodes = electrode_nodes(s.model, s.setup.electrodes)
    rows = []
    for t in range(T):
        for m, node in enumerate(nodes):
            rows.append([m, t, *(_fmt(c) for c in s.setup.electrodes[m]), _fmt(phi[node, t])])
    _write_rows(os.path.join(out, "observation.csv"), ["electrode", "t_index", "x", "y", "z", "value"], rows)
    with open(os.path.join(out, "forward.json"), "w") as fh:
        json.dump({"p": p.tolist(), "direction": direction, "t_index": t_index,
                   "relative_residual": rel}, fh, indent=2)
    logger.info("forward solve at p=%s direction %d: relative residual %.2e", p, direction, rel)
    return rel


def cmd_precompute(cfg, out):
    s = Setup(cfg)
    sol_dir = os.path.join(out, "solution")
    os.makedirs(sol_dir, exist_ok=True)
    sol = precompute_solution(s.model, s.aff, s.grid, cfg.pcg_config(), s.cond, log_dir=sol_dir)
    save_solution(sol, sol_dir)
    _write_rows(os.path.join(out, "ranks.csv"), ["direction", "node", "rank"], rank_report(sol))
    _write_rows(os.path.join(out, "singular_values.csv"), ["direction", "node", "index", "value"],
                ([d, lab, i, _fmt(v)] for d, lab, i, v in singular_value_report(sol)))
    logger.info("precomputation finished in %.2f s; storage %d of %d entries",
                sol.T_p, sol.storage(), sol.full_storage())
    return sol


def _load_data(cfg, s, seed):
    if cfg.sampling.data_file is None:
        return s.synthetic_data(seed)
    path = cfg.sampling.data_file
    if not os.path.exists(path):
        raise MissingArtifact(f"data file {path} not found")
    data = np.loadtxt(path, ndmin=1)
    expected = s.setup.M * s.model.t_steps
    if data.size != expected:
        raise ConfigError(f"data file has {data.size} values, expected {expected}")
    return data.ravel()


def _load_checked_solution(out, s):
    sol_dir = os.path.join(out, "solution")
    hint = f"; run 'emgtensor precompute --config ... --out {out}' first"
    try:
        sol = load_solution(sol_dir)
    except MissingArtifact as exc:
        raise MissingArtifact(str(exc) + hint) from exc
    if sol.model_hash != model_hash(s.model, s.cond):
        raise MissingArtifact(f"stored solution in {sol_dir} was computed for another model" + hint)
    if sol.grid.sizes != s.grid.sizes or any(
            not np.array_equal(a, b) for a, b in zip(sol.grid.values, s.grid.values)):
        raise MissingArtifact(f"stored solution in {sol_dir} uses another parameter grid" + hint)
    return sol


def _read_elapsed(path):
    with open(path) as fh:
        return np.array([float(r["elapsed_s"]) for r in csv.DictReader(fh)])


def cmd_sample(cfg, out, mode, seed):
    s = Setup(cfg)
    if mode == "TA":
        sol = _load_checked_solution(out, s)
        forward = TensorObservation(sol, s.model, s.setup)
        T_p = sol.T_p
    else:
        forward = DenseObservation(s.aff, s.rhs_all(), s.model, s.setup, s.grid)
        T_p = 0.0
    data = _load_data(cfg, s, seed)
    problem = cfg.posterior_problem(data, s.grid, seed)
    chain = run_chain(problem, forward, mode, T_p)
    stats = chain_stats(chain, problem.burn_in)
    os.makedirs(out, exist_ok=True)
    write_chain_csv(chain, os.path.join(out, f"chain_{mode}.csv"))
    timing = {"T_p": T_p, "speedup_measured": None, "speedup_model": None}
    key = "T_s_median" if mode == "SA" else "T_e_median"
    timing[key] = timing_summary(chain)
    other = os.path.join(out, f"chain_{'TA' if mode == 'SA' else 'SA'}.csv")
    if os.path.exists(other):
        times = _read_elapsed(other)
        if len(times) == len(chain):
            sa, ta = (chain.elapsed, times) if mode == "SA" else (times, chain.elapsed)
            if mode == "SA":
                T_p = timing["T_p"] = _stored_tp(out)
            J = len(chain)
            T_s, T_e = float(np.median(sa[1:])), float(np.median(ta[1:]))
            timing["speedup_measured"] = float(speedup_measured(sa, ta, T_p, J)[0])
            timing["speedup_model"] = float(speedup_model(J, T_p, T_s, T_e))
    write_stats_json(stats, os.path.join(out, f"stats_{mode}.json"), timing)
    logger.info("%s chain: acceptance rate %.4f", mode, stats.acceptance_rate)
    return chain, stats


def _stored_tp(out):
    path = os.path.join(out, "solution", "timing.json")
    if os.path.exists(path):
        with open(path) as fh:
            return float(json.load(fh)["T_p"])
    return 0.0


def _timed_chains(cfg, s, seed, J):
    sol = precompute_solution(s.model, s.aff, s.grid, cfg.pcg_config(), s.cond)
    data = s.synthetic_data(seed)
    problem = cfg.posterior_problem(data, s.grid, seed)
    problem.J_samples = J
    problem.burn_in = min(problem.burn_in, J - 1)
    sa = run_chain(problem, DenseObservation(s.aff, s.rhs_all(), s.model, s.setup, s.grid), "SA")
    ta = run_chain(problem, TensorObservation(sol, s.model, s.setup), "TA", sol.T_p)
    return sol.T_p, sa, ta


def cmd_bench(cfg, out, seed):
    """Speedup against the number of samples and against the spatial grid size."""
    b = cfg.bench
    os.makedirs(out, exist_ok=True)
    counts = sorted(int(j) for j in b.sample_counts)
    T_p, sa, ta = _timed_chains(cfg, Setup(cfg), seed, counts[-1])
    T_s, T_e = float(np.median(sa.elapsed[1:])), float(np.median(ta.elapsed[1:]))
    meas = speedup_measured(sa.elapsed, ta.elapsed, T_p, counts)
    model = speedup_model(counts, T_p, T_s, T_e)
    _write_rows(os.path.join(out, "speedup_vs_samples.csv"),
                ["J", "speedup_measured", "speedup_model", "T_p", "T_s_median", "T_e_median"],
                ([j, _fmt(m), _fmt(v), _fmt(T_p), _fmt(T_s), _fmt(T_e)] for j, m, v in zip(counts, meas, model)))
    rows = []
    for h in b.grid_h_M:
        s = Setup(cfg, h_M=float(h))
        T_p_h, sa_h, ta_h = _timed_chains(cfg, s, seed, int(b.grid_samples))
        # mean time per sample, scaled to the target sample count
        ts, te = float(sa_h.elapsed.mean()), float(ta_h.elapsed.mean())
        n = int(b.extrapolate_to)
        rows.append([_fmt(h), s.model.n_nodes, _fmt(T_p_h), _fmt(ts), _fmt(te),
                     _fmt(n * ts / (T_p_h + n * te))])
        logger.info("h_M=%.4f: extrapolated speedup %s", float(h), rows[-1][-1])
    _write_rows(os.path.join(out, "speedup_vs_grid.csv"),
                ["h_M", "n_nodes", "T_p", "T_s_mean", "T_e_mean", "speedup_extrapolated"], rows)
    return meas, model


def build_parser():
    parser = argparse.ArgumentParser(prog="emgtensor", description=__doc__)
    parser.add_argument("command", choices=["forward", "precompute", "sample", "bench"])
    parser.add_argument("--config", required=True, help="experiment JSON file")
    parser.add_argument("--mode", choices=["SA", "TA"], default="TA", help="sampler backend")
    parser.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--p", type=float, nargs=3, default=None, metavar=("P1", "P2", "P3"),
                        help="conductivity for forward (default: p_ref)")
    parser.add_argument("--direction", type=int, default=None, choices=[1, 2, 3])
    parser.add_argument("--t", type=int, default=None, help="time index of the field snapshot")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        out = args.out or cfg.output_dir
        if args.command == "forward":
            cmd_forward(cfg, out, args.p, args.direction, args.t)
        elif args.command == "precompute":
            cmd_precompute(cfg, out)
        elif args.command == "sample":
            cmd_sample(cfg, out, args.mode, seed)
        else:
            cmd_bench(cfg, out, seed)
    except (ConfigError, InvalidArgument) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalFailure, np.linalg.LinAlgError, spla.ArpackError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
