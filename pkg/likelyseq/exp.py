#!/usr/bin/env python3
"""Batch experiments: every configured policy from every state of every chain."""

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

from dargs import Argument

from likelyseq.gen import GenSpec, generate_chain
from likelyseq.lib.chain import read_chain, write_chain
from likelyseq.lib.utils import create_path, get_file_md5, parse_int_seq
from likelyseq.metrics import (
    StateRecord,
    build_report,
    format_recovery,
    geo_mean,
    improvement_counts,
)
from likelyseq.policies import CostCounters, RolloutSpec, decode, make_policy

POLICY_NAMES = ("greedy", "optimal", "rollout")
STATES_CSV = "states.csv"
AGGREGATE_CSV = "aggregate.csv"
MANIFEST = "exp.run.json"
chain_format = "chain.%03d.chain"


def policy_args():
    doc_lookahead = "lookahead steps; a range string such as '1:6' expands into one policy per value"
    return [
        Argument("label", [str, type(None)], optional=True, default=None),
        Argument("policy", str, optional=False, doc="greedy, optimal or rollout"),
        Argument("lookahead", [int, str], optional=True, default=1, doc=doc_lookahead),
        Argument("truncate", [int, str], optional=True, default="none"),
        Argument("width", [int, str], optional=True, default="full"),
        Argument("level", int, optional=True, default=0),
    ]


def exp_args():
    return [
        Argument("chains", int, optional=True, default=1, doc="number of random chains"),
        Argument("states", [int, type(None)], optional=True, default=None),
        Argument(
            "out_degree", [int, type(None)], optional=True, default=None, alias=["q"]
        ),
        Argument("seed", int, optional=True, default=0, doc="seed of chain 0; chain c uses seed + c"),
        Argument("self_loops", bool, optional=True, default=True),
        Argument(
            "chain_files",
            [list, type(None)],
            optional=True,
            default=None,
            doc="stored chain files, used instead of generated chains",
        ),
        Argument("horizon", int, optional=False, alias=["N"]),
        Argument("policies", list, policy_args(), repeat=True, optional=False),
        Argument("recovery", bool, optional=True, default=True),
        Argument("output", str, optional=True, default="new_job"),
        Argument("nproc", int, optional=True, default=1),
        Argument("verbose", bool, optional=True, default=False),
    ]


def exp_format():
    return Argument("exp", dict, exp_args())


def normalize_config(jdata):
    fmt = exp_format()
    config = fmt.normalize_value(jdata, trim_pattern="_*")
    fmt.check_value(config, strict=True)
    return config


def expand_policies(entries):
    """Policy entries with one :class:`RolloutSpec` or baseline name each, plus labels."""
    expanded = []
    for entry in entries:
        name = entry["policy"]
        if name not in POLICY_NAMES:
            raise RuntimeError(f"unknown policy {name!r}, expected one of {POLICY_NAMES}")
        if name != "rollout":
            expanded.append((entry["label"] or name, name))
            continue
        lookaheads = entry["lookahead"]
        if isinstance(lookaheads, str):
            lookaheads = parse_int_seq([lookaheads])
        else:
            lookaheads = [lookaheads]
        for ll in lookaheads:
            spec = RolloutSpec.from_strings(
                lookahead=ll,
                truncate=entry["truncate"],
                width=entry["width"],
                level=entry["level"],
            )
            if entry["label"] is None:
                label = spec.label
            elif len(lookaheads) > 1:
                label = f"{entry['label']}-l{ll}"
            else:
                label = entry["label"]
            expanded.append((label, spec))
    labels = [label for label, _ in expanded]
    dups = sorted({label for label in labels if labels.count(label) > 1})
    if dups:
        raise RuntimeError(f"duplicate policy labels {dups}")
    return expanded


def _baseline_label(policies, name):
    for label, policy in policies:
        if policy == name:
            return label
    return None


def check_config(config, policies):
    if config["horizon"] < 1:
        raise RuntimeError(f"horizon must be >= 1, got {config['horizon']}")
    if config["nproc"] < 1:
        raise RuntimeError(f"nproc must be >= 1, got {config['nproc']}")
    if config["chain_files"] is None:
        if config["states"] is None or config["out_degree"] is None:
            raise RuntimeError("states and out_degree are required without chain_files")
        if config["chains"] < 1:
            raise RuntimeError(f"chains must be >= 1, got {config['chains']}")
    if config["recovery"]:
        for name in ("greedy", "optimal"):
            if _baseline_label(policies, name) is None:
                raise RuntimeError(f"recovery requested without a {name} policy")


def load_chain_files(config):
    """Read every stored chain named in ``config``; None when chains are generated."""
    if config["chain_files"] is None:
        return None
    return [(src, read_chain(src)) for src in config["chain_files"]]


def prepare_chains(config, job_dir, stored=None):
    """Generate chains, or copy the ``stored`` ones, into ``job_dir/chains``; returns the paths and seeds."""
    chain_dir = os.path.join(job_dir, "chains")
    os.makedirs(chain_dir, exist_ok=True)
    paths = []
    seeds = []
    if stored is not None:
        for ii, (src, model) in enumerate(stored):
            path = os.path.join(chain_dir, chain_format % ii)
            write_chain(model, path, comments=[f"source: {os.path.basename(src)}"])
            paths.append(path)
    else:
        for ii in range(config["chains"]):
            spec = GenSpec(
                state_count=config["states"],
                out_degree=config["out_degree"],
                seed=config["seed"] + ii,
                self_loops=config["self_loops"],
            )
            path = os.path.join(chain_dir, chain_format % ii)
            write_chain(generate_chain(spec), path, comments=spec.header_comments())
            paths.append(path)
            seeds.append(spec.seed)
    return paths, seeds


def run_task(chain_index, chain_path, horizon, label, policy):
    """Decode every state of one chain with one policy."""
    start = time.perf_counter()
    model = read_chain(chain_path)
    pol = make_policy(model, horizon, policy)
    counters = CostCounters()
    rows = []
    for xx in range(model.state_count):
        traj, cost = decode(model, xx, horizon, pol)
        counters.add(cost)
        rows.append(StateRecord(chain_index, xx, label, traj.logprob, geo_mean(traj.logprob, horizon)))
    return rows, counters, time.perf_counter() - start


def write_states_csv(path, records):
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["chain", "state", "policy", "logprob", "geomean"])
        for rr in records:
            writer.writerow([rr.chain, rr.state, rr.policy, repr(rr.logprob), repr(rr.geomean)])


def write_aggregate_csv(path, report, labels, recovery):
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["policy", "avg_geomean", "recovery_pct"])
        for label in labels:
            pct = report.recovery_column(label) if recovery else ""
            writer.writerow([label, repr(report.aggregates[label]), pct])


def run_experiment(jdata, output=None, nproc=None):
    """Run the experiment described by the parameter dict ``jdata``.

    Writes ``states.csv``, ``aggregate.csv`` and the manifest ``exp.run.json``
    into the output folder and returns the :class:`~likelyseq.metrics.RecoveryReport`.
    """
    jdata = dict(jdata)
    if output is not None:
        jdata["output"] = output
    if nproc is not None:
        jdata["nproc"] = nproc
    config = normalize_config(jdata)
    policies = expand_policies(config["policies"])
    check_config(config, policies)
    stored = load_chain_files(config)
    job_dir = create_path(config["output"])
    paths, seeds = prepare_chains(config, job_dir, stored)
    horizon = config["horizon"]

    tasks = [
        (cc, path, horizon, label, policy)
        for cc, path in enumerate(paths)
        for label, policy in policies
    ]
    if config["nproc"] == 1:
        results = [run_task(*task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=config["nproc"]) as pool:
            futures = [pool.submit(run_task, *task) for task in tasks]
            results = [ff.result() for ff in futures]

    records = []
    timing = {label: 0.0 for label, _ in policies}
    counters = {label: CostCounters() for label, _ in policies}
    for (cc, _, _, label, _), (rows, cost, elapsed) in zip(tasks, results):
        records.extend(rows)
        counters[label].add(cost)
        timing[label] += elapsed
        if config["verbose"]:
            print(f"# chain {cc:03d} {label}: {elapsed:.3f} s")
    records.sort(key=lambda rr: (rr.chain, rr.state, rr.policy))

    labels = [label for label, _ in policies]
    report = build_report(
        records,
        horizon,
        greedy_label=_baseline_label(policies, "greedy"),
        optimal_label=_baseline_label(policies, "optimal"),
        recovery=config["recovery"],
    )
    write_states_csv(os.path.join(job_dir, STATES_CSV), records)
    write_aggregate_csv(os.path.join(job_dir, AGGREGATE_CSV), report, labels, config["recovery"])

    if stored is not None:
        # the copies under chains/, relative to the manifest
        config = dict(config, chain_files=[os.path.relpath(path, job_dir) for path in paths])
    manifest = {
        "config": config,
        "seeds": seeds,
        "chains": [
            {"file": os.path.relpath(path, job_dir), "md5": get_file_md5(path)}
            for path in paths
        ],
        "timing": timing,
        "counters": {label: cost.as_dict() for label, cost in counters.items()},
        "aggregate": {
            label: {
                "avg_geomean": report.aggregates[label],
                "recovery_pct": report.recovery.get(label),
            }
            for label in labels
        },
    }
    with open(os.path.join(job_dir, MANIFEST), "w") as fp:
        json.dump(manifest, fp, indent=4)
    return report


def print_report(report, labels):
    for label in labels:
        print(
            "# %-36s avg geomean %.6f  recovery %s"
            % (label, report.aggregates[label], format_recovery(report.recovery.get(label)))
        )
    if "greedy" in labels:
        for label, count in improvement_counts(report.per_state).items():
            print(
                "# %-36s vs greedy: %d better, %d tie, %d worse"
                % (label, count.better, count.tie, count.worse)
            )


def add_module_subparsers(main_subparsers):
    parser_exp = main_subparsers.add_parser(
        "exp", help="run a batch experiment over random or stored chains"
    )
    parser_exp.add_argument(
        "PARAM", type=str, help="json parameter file, or the exp.run.json of a former run"
    )
    parser_exp.add_argument(
        "-o", "--output", type=str, default=None, help="output folder of the job"
    )
    parser_exp.add_argument(
        "-n", "--nproc", type=int, default=None, help="number of worker processes"
    )
    parser_exp.set_defaults(func=handle_exp)


def handle_exp(args):
    with open(args.PARAM) as fp:
        jdata = json.load(fp)
    if "config" in jdata:
        # a former run: its chain_files are relative to the manifest
        jdata = dict(jdata["config"])
        if jdata.get("chain_files") is not None:
            base = os.path.dirname(os.path.abspath(args.PARAM))
            jdata["chain_files"] = [os.path.join(base, ff) for ff in jdata["chain_files"]]
    report = run_experiment(jdata, output=args.output, nproc=args.nproc)
    print_report(report, list(report.aggregates))
    return report
