"""Command-line experiment harness.

Subcommands:
    validate        check a config against every scheme constraint
    train           run gradient descent per scheme, write trace CSVs
    latency         Monte Carlo iteration times per scheme, with envelopes
    verify          exhaustive straggler-recovery and code-validity suites
    transport-demo  one coded round as real processes, with failures

All outputs are deterministic given the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import engine
from .allocation import cr_allocate, r_cr
from .codes import build_encoding, validate_code
from .config import ExperimentConfig, load_config, validate_config
from .latency import cr_bounds, mc_expected_latency
from .ml import FULL_GRADIENT_SCHEMES, gd_run, generate_synthetic, load_dataset_csv, trace_to_csv
from .topology import build_tree, enumerate_patterns
from .transport import FailurePlan, OracleSpec, TransportConfig, orchestrate

__all__ = ["main", "cmd_validate", "cmd_train", "cmd_latency", "cmd_verify", "cmd_transport_demo"]


def _load_data(cfg: ExperimentConfig):
    if cfg.data_kind == "csv":
        dataset = load_dataset_csv(cfg.csv_path)
        return dataset, None
    dataset, theta_star = generate_synthetic(cfg.d, cfg.p, cfg.data_seed, cfg.noise)
    return dataset, theta_star


def cmd_validate(cfg: ExperimentConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    problems = validate_config(cfg)
    if problems:
        print(f"INVALID: {problems[0]}", file=out)
        for extra in problems[1:]:
            print(f"  also: {extra}", file=out)
        return 1
    print(
        f"OK: schemes={','.join(cfg.schemes)} d={cfg.d} "
        f"tree=({cfg.n},{cfg.L},{cfg.s}) group=({cfg.N},{cfg.S})",
        file=out,
    )
    return 0


def cmd_train(cfg: ExperimentConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    code = cmd_validate(cfg, out=out)
    if code:
        return code
    cfg.out.mkdir(parents=True, exist_ok=True)
    dataset, theta_star = _load_data(cfg)
    finals = {}
    for scheme in cfg.schemes:
        trace = gd_run(dataset, cfg.gd_config(scheme), theta_star)
        path = cfg.out / f"train_{scheme}.csv"
        trace_to_csv(trace, path)
        finals[scheme] = trace[-1].theta
        print(f"{scheme}: {len(trace)} iterations -> {path}", file=out)
    full = [sch for sch in cfg.schemes if sch in FULL_GRADIENT_SCHEMES]
    with open(cfg.out / "train_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme_a", "scheme_b", "max_theta_diff"])
        for i, sa in enumerate(full):
            for sb in full[i + 1 :]:
                diff = float(np.max(np.abs(finals[sa] - finals[sb])))
                writer.writerow([sa, sb, repr(diff)])
                print(f"max |theta({sa}) - theta({sb})| = {diff:.3e}", file=out)
    return 0


def cmd_latency(cfg: ExperimentConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    code = cmd_validate(cfg, out=out)
    if code:
        return code
    cfg.out.mkdir(parents=True, exist_ok=True)
    lat = cfg.latency_config()
    rows = []
    means = {}
    for scheme in cfg.schemes:
        if scheme == "cr":
            topo, resil = build_tree(cfg.n, cfg.L), cfg.s
            lower, upper = cr_bounds(lat, cfg.n, cfg.L, cfg.s) if cfg.s else ("", "")
        else:
            topo, resil = cfg.N, (cfg.S if scheme in ("gc", "sgd") else 0)
            lower, upper = "", ""
        mean, half = mc_expected_latency(scheme, topo, lat, resil, trials=cfg.trials)
        means[scheme] = mean
        rows.append(
            [scheme, repr(mean), repr(half), repr(lower) if lower != "" else "", repr(upper) if upper != "" else ""]
        )
        print(f"{scheme}: mean={mean:.6g} ci95=±{half:.3g}", file=out)
    path = cfg.out / "latency_summary.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "mean", "ci95_half_width", "bound_lower", "bound_upper"])
        writer.writerows(rows)
    ordering = " < ".join(sorted(means, key=means.get))
    print(f"ordering by mean: {ordering}", file=out)
    print(f"wrote {path}", file=out)
    return 0


def cmd_verify(cfg: ExperimentConfig, out=None) -> int:
    """Exhaustive recovery over straggler patterns plus code validity sweeps."""
    out = out if out is not None else sys.stdout
    failures = 0

    tree = build_tree(cfg.n, cfg.L)
    B = build_encoding(cfg.n, cfg.s, cfg.seed)
    d = cfg.d
    assignment = cr_allocate(tree, cfg.s, d, B=B)
    patterns = enumerate_patterns(tree, cfg.s, cap=10_000, seed=cfg.seed)

    def identity_oracle(_theta, slices):
        vec = np.zeros(d)
        for s in slices:
            vec[s.start : s.stop] += s.weight
        return vec

    ones = np.ones(d)
    theta = np.zeros(1)
    bad = 0
    for pattern in patterns:
        got = engine.cr_execute(tree, assignment, B, pattern, identity_oracle, theta)
        if np.max(np.abs(got - ones)) > 1e-9:
            bad += 1
    status = "PASS" if bad == 0 else "FAIL"
    print(
        f"{status}: recovery {len(patterns) - bad}/{len(patterns)} patterns exact "
        f"on ({cfg.n},{cfg.L})-tree, s={cfg.s}, d={d}",
        file=out,
    )
    failures += bad

    ok = validate_code(B)
    print(
        f"{'PASS' if ok else 'FAIL'}: code validity for (n={cfg.n}, s={cfg.s}), "
        f"all survivor sets",
        file=out,
    )
    failures += 0 if ok else 1

    load = r_cr(cfg.n, cfg.L, cfg.s) * d
    equal = all(
        sum(sl.count for sl in assignment.local[node]) == load
        for node in tree.workers()
    )
    print(f"{'PASS' if equal else 'FAIL'}: equal per-node load of {load} points", file=out)
    failures += 0 if equal else 1
    return 1 if failures else 0


def cmd_transport_demo(cfg: ExperimentConfig, out=None) -> int:
    """One real-process round killing one child per live parent, checked
    against the exact aggregate."""
    out = out if out is not None else sys.stdout
    if cfg.s < 1:
        print("transport demo needs s >= 1 to have something to kill", file=out)
        return 1
    tree = build_tree(cfg.n, cfg.L)
    rng = np.random.default_rng(cfg.seed)
    victims: set = set()

    def subtree_dead(node) -> bool:
        while node.layer > 0:
            if node in victims:
                return True
            node = tree.parent(node)
        return False

    for parent in tree.parents():
        if parent.layer > 0 and subtree_dead(parent):
            continue
        kids = tree.children(parent)
        victims.add(kids[int(rng.integers(tree.n))])
    # A dead internal node loses its whole subtree; skip starting orphans.
    doomed = {w for w in tree.workers() if subtree_dead(w)}
    plan = FailurePlan(never_start=frozenset(doomed))
    spec = OracleSpec(kind="identity", d=cfg.d, p=cfg.d)
    tcfg = TransportConfig(
        tree=tree, s=cfg.s, oracle=spec, theta=np.zeros(cfg.d), deadline=cfg.deadline
    )
    cfg.out.mkdir(parents=True, exist_ok=True)
    print(f"killing {len(victims)} nodes: {sorted(str(v) for v in victims)}", file=out)
    report = orchestrate(tcfg, cfg.out / "transport_demo", plan)
    if not report.ok:
        print(f"FAIL: {report.error}", file=out)
        return 1
    err = float(np.max(np.abs(report.gradient - np.ones(cfg.d))))
    status = "PASS" if err <= 1e-9 else "FAIL"
    print(f"{status}: recovered gradient within {err:.3e} of the exact sum", file=out)
    return 0 if status == "PASS" else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="codedreduce", description=__doc__)
    parser.add_argument("--config", required=True, help="INI experiment file")
    parser.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    parser.add_argument("--trials", type=int, default=None, help="override experiment.trials")
    parser.add_argument("--out", default=None, help="override experiment.out")
    parser.add_argument(
        "command",
        choices=["validate", "train", "latency", "verify", "transport-demo"],
    )
    args = parser.parse_args(argv)
    cfg = load_config(args.config, seed=args.seed, trials=args.trials, out=args.out)
    handler = {
        "validate": cmd_validate,
        "train": cmd_train,
        "latency": cmd_latency,
        "verify": cmd_verify,
        "transport-demo": cmd_transport_demo,
    }[args.command]
    return handler(cfg)


if __name__ == "__main__":
    sys.exit(main())
