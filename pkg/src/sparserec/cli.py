"""Command-line front end.

Subcommands
-----------
certify    recovery certificate for a matrix/signal pair or a holography config
solve      ISTA reconstruction with a fixed or certified parameter
relations  ERC / source condition / NSP chain on one instance or a random batch
holo       jet hologram experiments from a config file

Reports are JSON written to ``--out`` (stdout by default). Exit codes:
0 success, 1 error, 2 certificate fails (certify), 3 solver did not converge
(solve).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .certify import AlphaPolicy, NoiseInfo, _jsonable, build_certificate
from .holography import build_dictionary, jet_experiment, jet_condition_lhs, load_config, simulate_hologram
from .operators import DenseOperator, FBIError, SparseSignal, SupportSet, load_matrix, load_vector
from .relations import CapExceeded, ChainViolation, implication_suite
from .solver import SolverOptions, ista_solve

EXIT_OK, EXIT_ERROR, EXIT_NOT_CERTIFIED, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _setup_logging():
    level = os.environ.get("SPARSEREC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fixture_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    stem = name if name.endswith(".json") else name + ".json"
    candidate = resources.files("sparserec") / "fixtures" / stem
    if candidate.is_file():
        return Path(str(candidate))
    raise FileNotFoundError(f"config {name!r} is neither a file nor a bundled fixture")


def _read_config(name: str) -> dict:
    return json.loads(_fixture_path(name).read_text())


def _emit(args, command: str, report: dict, seed) -> None:
    envelope = {"command": command, "seed": seed, "version": __version__, "report": report}
    if not args.no_timestamp:
        envelope["timestamp"] = datetime.now(timezone.utc).isoformat()
    text = json.dumps(_jsonable(envelope), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_operator(args) -> DenseOperator:
    if not args.matrix:
        raise UsageError("--matrix is required")
    return DenseOperator(load_matrix(args.matrix))


def _load_signal(args, K: DenseOperator) -> SparseSignal:
    u = load_vector(args.signal)
    if u.size != K.cols:
        raise UsageError(f"signal has {u.size} entries, matrix has {K.cols} columns")
    return SparseSignal(u)


def _noise(args, K: DenseOperator, u: SparseSignal) -> NoiseInfo:
    given = [x is not None for x in (args.data, args.noise_sigma, args.epsilon)]
    if sum(given) > 1:
        raise UsageError("give at most one of --data, --noise-sigma, --epsilon")
    if args.data:
        g = load_vector(args.data)
        if g.size != K.rows:
            raise UsageError(f"data has {g.size} entries, matrix has {K.rows} rows")
        return NoiseInfo.from_eta(K, g - K.matvec(u.values))
    if args.noise_sigma is not None:
        rng = np.random.default_rng(args.seed)
        return NoiseInfo.from_eta(K, args.noise_sigma * rng.standard_normal(K.rows))
    if args.epsilon is not None:
        return NoiseInfo.from_epsilon(K, args.epsilon)
    return NoiseInfo.noiseless(K)


def _holo_seed(args, data: dict) -> int:
    return args.seed if args.seed is not None else int(data.get("seed", 0))


def cmd_certify(args) -> int:
    policy = AlphaPolicy(args.alpha_policy)
    if args.config:
        # holography: the a-priori jet condition decides, the realized
        # certificate is reported alongside it
        data = _read_config(args.config)
        cfg, jet, _ = load_config(data)
        seed = _holo_seed(args, data)
        inst = simulate_hologram(cfg, jet, seed)
        cert = build_certificate(inst.K, inst.u_true, inst.noise, policy)
        lhs = jet_condition_lhs(jet.rho, cfg.pitch, jet.n_particles, cfg)
        threshold = 1.0 - 2.0 * cert.r_ratio
        holds = lhs < threshold
        report = {"certificate": cert.to_dict(),
                  "jet_condition": {"lhs": lhs, "threshold": threshold, "holds": holds}}
        _emit(args, "certify", report, seed)
        return EXIT_OK if holds else EXIT_NOT_CERTIFIED

    K = _load_operator(args)
    if not args.signal:
        raise UsageError("--signal is required")
    u = _load_signal(args, K)
    cert = build_certificate(K, u, _noise(args, K, u), policy)
    _emit(args, "certify", {"certificate": cert.to_dict()}, args.seed)
    return EXIT_OK if cert.eps_erc_holds else EXIT_NOT_CERTIFIED


def cmd_solve(args) -> int:
    K = _load_operator(args)
    if not args.data:
        raise UsageError("--data is required")
    g = load_vector(args.data)
    if g.size != K.rows:
        raise UsageError(f"data has {g.size} entries, matrix has {K.rows} rows")
    u = _load_signal(args, K) if args.signal else None

    cert = None
    if args.alpha is not None:
        alpha = args.alpha
    elif args.alpha_policy_given:
        if u is None:
            raise UsageError("--alpha-policy needs --signal to certify the instance")
        cert = build_certificate(K, u, NoiseInfo.from_eta(K, g - K.matvec(u.values)), args.alpha_policy)
        if cert.chosen_alpha is None:
            raise UsageError("instance is not certified: the admissible alpha interval is empty")
        alpha = cert.chosen_alpha
    else:
        raise UsageError("give --alpha or --alpha-policy")

    opts = SolverOptions(max_iters=args.max_iters)
    res = ista_solve(K, g, alpha, opts)
    report = {
        "alpha": alpha,
        "support": list(res.support().indices),
        "minimizer": res.minimizer.values.tolist(),
        "objective": res.objective,
        "optimality_residual": res.optimality_residual,
        "iterations": res.iterations,
        "converged": res.converged,
        "step": res.step,
    }
    if cert is not None:
        report["certificate"] = cert.to_dict()
    if u is not None:
        report["true_support"] = list(u.support().indices)
        report["support_match"] = res.support().indices == u.support().indices
    _emit(args, "solve", report, args.seed)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _parse_support(text: str) -> SupportSet:
    try:
        return SupportSet.of(int(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise UsageError(f"bad --support {text!r}: {exc}") from exc


def _random_instance(rng, rows_range, cols_range, max_support):
    rows = int(rng.integers(rows_range[0], rows_range[1] + 1))
    cols = int(rng.integers(max(cols_range[0], rows + 1), cols_range[1] + 1))
    k = int(rng.integers(1, min(max_support, rows) + 1))
    A = rng.standard_normal((rows, cols))
    A /= np.linalg.norm(A, axis=0)
    I = SupportSet.of(rng.choice(cols, size=k, replace=False))
    return DenseOperator(A, normalized=True), I


def _relations_trial(seed: int) -> dict:
    K, I = _random_instance(np.random.default_rng(seed), (6, 10), (9, 15), 4)
    try:
        rep = implication_suite(K, I)
        rep["seed"] = seed
        return rep
    except ChainViolation as exc:
        return {"seed": seed, "chain_violations": [str(exc)]}


def cmd_relations(args) -> int:
    if args.trials and args.trials > 1 and not args.matrix:
        seed = args.seed if args.seed is not None else 0
        with ThreadPoolExecutor() as pool:
            reports = list(pool.map(_relations_trial, [seed + i for i in range(args.trials)]))
        violations = sum(bool(r["chain_violations"]) for r in reports)
        summary = {
            "trials": args.trials,
            "chain_violations": violations,
            "erc_true": sum(bool(r.get("erc", {}).get("holds")) for r in reports),
            "uniform_strict_sc_true": sum(bool(r.get("uniform_strict_sc", {}).get("holds")) for r in reports),
            "nsp_true": sum(bool(r.get("nsp", {}).get("holds")) for r in reports),
            "instances": reports,
        }
        _emit(args, "relations", summary, seed)
        return EXIT_ERROR if violations else EXIT_OK

    K = _load_operator(args)
    if args.support:
        I = _parse_support(args.support)
    elif args.signal:
        I = _load_signal(args, K).support()
    else:
        raise UsageError("give --support or --signal")
    _emit(args, "relations", implication_suite(K, I), args.seed)
    return EXIT_OK


def _write_columns(path: Path, x, y, header: str):
    np.savetxt(path, np.column_stack([x, y]), header=header, fmt="%.10g")


def _write_plot_data(stem: Path, rep: dict):
    trace, spikes = rep["plot_data"]["hologram_trace"], rep["plot_data"]["spikes"]
    _write_columns(stem.with_name(stem.name + "_hologram_noisy.txt"), trace[:, 0], trace[:, 1], "x_um value")
    _write_columns(stem.with_name(stem.name + "_hologram_clean.txt"), trace[:, 0], trace[:, 2], "x_um value")
    _write_columns(stem.with_name(stem.name + "_spikes_true.txt"), spikes[:, 0], spikes[:, 1], "x_um amplitude")
    _write_columns(stem.with_name(stem.name + "_spikes_recovered.txt"), spikes[:, 0], spikes[:, 2], "x_um amplitude")


def cmd_holo(args) -> int:
    if not args.config:
        raise UsageError("--config is required")
    data = _read_config(args.config)
    cfg, jet, _ = load_config(data)
    seed = _holo_seed(args, data)
    trials = max(1, args.trials or 1)
    policy = AlphaPolicy(args.alpha_policy)

    def run(i):
        return jet_experiment(cfg, jet, policy, seed=seed + i)

    build_dictionary(cfg)
    if trials == 1:
        reports = [run(0)]
    else:
        with ThreadPoolExecutor() as pool:
            reports = list(pool.map(run, range(trials)))

    if args.out:
        stem = Path(args.out).with_suffix("")
        _write_plot_data(stem, reports[0])
    for r in reports:
        r.pop("plot_data")
    if trials == 1:
        report = reports[0]
    else:
        report = {
            "trials": trials,
            "success_rate": sum(r["exact_recovery"] for r in reports) / trials,
            "condition_rate": sum(r["jet_condition"]["holds"] for r in reports) / trials,
            "instances": reports,
        }
    _emit(args, "holo", report, seed)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0, or the config's seed)")
    common.add_argument("--out", help="report path (default stdout)")
    common.add_argument("--no-timestamp", action="store_true", help="omit the timestamp for reproducible reports")
    common.add_argument("--alpha-policy", choices=[p.value for p in AlphaPolicy], default=None)

    p = argparse.ArgumentParser(prog="sparserec", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", parents=[common], help="evaluate recovery conditions")
    c.add_argument("--matrix")
    c.add_argument("--signal")
    c.add_argument("--data", help="measured data; noise is taken as data - K signal")
    c.add_argument("--noise-sigma", type=float, help="simulate Gaussian noise of this deviation")
    c.add_argument("--epsilon", type=float, help="only a noise norm bound is known")
    c.add_argument("--config", help="holography config file or bundled fixture name")

    s = sub.add_parser("solve", parents=[common], help="run ISTA")
    s.add_argument("--matrix")
    s.add_argument("--data")
    s.add_argument("--signal", help="ground truth, needed with --alpha-policy")
    s.add_argument("--alpha", type=float)
    s.add_argument("--max-iters", type=int, default=SolverOptions.max_iters)

    r = sub.add_parser("relations", parents=[common], help="ERC => source condition => NSP")
    r.add_argument("--matrix")
    r.add_argument("--support", help="comma separated atom indices")
    r.add_argument("--signal")
    r.add_argument("--trials", type=int, default=1, help="random small instances (without --matrix)")

    h = sub.add_parser("holo", parents=[common], help="jet hologram experiment")
    h.add_argument("--config", required=True)
    h.add_argument("--trials", type=int, default=1)
    return p


COMMANDS = {"certify": cmd_certify, "solve": cmd_solve, "relations": cmd_relations, "holo": cmd_holo}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    args.alpha_policy_given = args.alpha_policy is not None
    if args.alpha_policy is None:
        args.alpha_policy = AlphaPolicy.LOWER_MARGIN.value
    if args.seed is None and not getattr(args, "config", None):
        args.seed = 0
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FBIError, CapExceeded, ChainViolation, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
