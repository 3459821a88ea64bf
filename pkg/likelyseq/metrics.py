#!/usr/bin/env python3
"""Geometric-mean summaries of decoded trajectories and the percentage recovery score."""

import warnings
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from likelyseq.lib.logprob import is_logprob, to_prob

RECOVERY_EPS = 1e-12
UNDEFINED = "undefined"

StateRecord = namedtuple("StateRecord", ["chain", "state", "policy", "logprob", "geomean"])
ImprovementCount = namedtuple("ImprovementCount", ["better", "tie", "worse"])


def geo_mean(logprob, horizon):
    """Per-step geometric mean ``P ** (1/N)`` of a trajectory of log-probability ``logprob``."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not is_logprob(logprob):
        raise ValueError(f"not a log-probability: {logprob!r}")
    return to_prob(logprob / horizon)


def avg_geo_mean(entries):
    """Average of ``geo_mean`` over ``(logprob, N)`` entries."""
    entries = list(entries)
    if not entries:
        raise ValueError("cannot average an empty list of trajectories")
    horizons = {nn for _, nn in entries}
    if len(horizons) != 1:
        raise ValueError(f"entries mix horizons {sorted(horizons)}")
    return float(np.mean([geo_mean(lp, nn) for lp, nn in entries]))


def pct_recovery(rollout_avg, greedy_avg, opt_avg):
    """Percent of the greedy optimality loss recovered; None when greedy is already optimal."""
    loss = opt_avg - greedy_avg
    if loss < RECOVERY_EPS:
        warnings.warn(
            f"recovery undefined: optimal {opt_avg!r} does not exceed greedy {greedy_avg!r}",
            RuntimeWarning,
        )
        return None
    return 100.0 * (rollout_avg - greedy_avg) / loss


def format_recovery(value):
    if value is None:
        return UNDEFINED
    return repr(float(value))


@dataclass
class RecoveryReport:
    per_state: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    recovery: dict = field(default_factory=dict)

    def recovery_column(self, label):
        return format_recovery(self.recovery.get(label))


def build_report(records, horizon, greedy_label="greedy", optimal_label="optimal", recovery=True):
    """Aggregate per-state decode records into a :class:`RecoveryReport`.

    ``records`` are :class:`StateRecord` (or tuples of the same fields). Labels
    keep the order of their first appearance. Recovery is reported for every
    policy, the baselines included; it is undefined (None) for all of them when
    greedy is already optimal on average, with a single warning.
    """
    records = [StateRecord(*rr) for rr in records]
    per_label = {}
    for rr in records:
        per_label.setdefault(rr.policy, []).append((rr.logprob, horizon))
    aggregates = {label: avg_geo_mean(entries) for label, entries in per_label.items()}
    report = RecoveryReport(per_state=records, aggregates=aggregates)
    if not recovery:
        return report
    for label in (greedy_label, optimal_label):
        if label not in aggregates:
            raise RuntimeError(f"recovery needs the baseline policy {label!r}")
    greedy_avg = aggregates[greedy_label]
    opt_avg = aggregates[optimal_label]
    if opt_avg - greedy_avg < RECOVERY_EPS:
        pct_recovery(opt_avg, greedy_avg, opt_avg)
        report.recovery = {label: None for label in aggregates}
        return report
    for label, avg in aggregates.items():
        report.recovery[label] = pct_recovery(avg, greedy_avg, opt_avg)
    return report


def improvement_counts(records, baseline="greedy", tol=1e-12):
    """Per policy, how many (chain, state) pairs beat, tie or lose against ``baseline``."""
    records = [StateRecord(*rr) for rr in records]
    base = {
        (rr.chain, rr.state): rr.logprob for rr in records if rr.policy == baseline
    }
    counts = {}
    for rr in records:
        if rr.policy == baseline:
            continue
        ref = base[(rr.chain, rr.state)]
        better, tie, worse = counts.get(rr.policy, (0, 0, 0))
        if rr.logprob == ref or abs(rr.logprob - ref) <= tol:
            tie += 1
        elif rr.logprob > ref:
            better += 1
        else:
            worse += 1
        counts[rr.policy] = (better, tie, worse)
    return {label: ImprovementCount(*cc) for label, cc in counts.items()}
