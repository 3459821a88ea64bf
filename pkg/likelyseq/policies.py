#!/usr/bin/env python3
"""Sequence selection policies for finite Markov chains.

Greedy selection, the exact most-likely policy (backward recursion over
``P*_k(x)``), the rollout family built on a base policy and an exhaustive
oracle. Every probability is a natural logarithm.

Policies work on a *chain view*: any object providing ``ranked_successors``,
``top_successors``, ``logprob``, ``order_key`` and ``check_state``. Both
:class:`~likelyseq.lib.chain.TransitionModel` and
:class:`~likelyseq.provider.ProviderChain` are chain views.
"""

import json
import math
import shlex
import sys
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from likelyseq.lib.chain import (
    TransitionModel,
    Trajectory,
    read_chain,
    trajectory_logprob,
)
from likelyseq.lib.logprob import NEG_INF, log_mult
from likelyseq.metrics import geo_mean
from likelyseq.provider import ExternalProcessSource, ProtocolError, ProviderChain

BRUTE_FORCE_LIMIT = 10**7


class CapabilityError(RuntimeError):
    pass


@dataclass
class CostCounters:
    comparisons: int = 0
    base_policy_steps: int = 0

    def add(self, cost):
        """Accumulate another counter or a ``(comparisons, base_policy_steps)`` pair."""
        if isinstance(cost, CostCounters):
            cost = (cost.comparisons, cost.base_policy_steps)
        self.comparisons += cost[0]
        self.base_policy_steps += cost[1]
        return self

    def __add__(self, other):
        return CostCounters(self.comparisons, self.base_policy_steps).add(other)

    def as_dict(self):
        return {
            "comparisons": self.comparisons,
            "base_policy_steps": self.base_policy_steps,
        }


def _parse_limit(value, none_word):
    if value is None:
        return None
    if isinstance(value, str):
        if value.lower() == none_word:
            return None
        value = int(value)
    return int(value)


@dataclass(frozen=True)
class RolloutSpec:
    """Rollout variant: ``lookahead`` steps, tail ``truncate`` (None: to the horizon),
    candidate ``width`` (None: all successors) and iteration ``level`` (0: greedy base).
    """

    lookahead: int = 1
    truncate: Optional[int] = None
    width: Optional[int] = None
    level: int = 0

    def __post_init__(self):
        if self.lookahead < 1:
            raise ValueError(f"lookahead must be >= 1, got {self.lookahead}")
        if self.truncate is not None and self.truncate < 1:
            raise ValueError(f"truncate must be >= 1 or none, got {self.truncate}")
        if self.width is not None and self.width < 1:
            raise ValueError(f"width must be >= 1 or full, got {self.width}")
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")

    @classmethod
    def from_strings(cls, lookahead=1, truncate=None, width=None, level=0):
        return cls(
            lookahead=int(lookahead),
            truncate=_parse_limit(truncate, "none"),
            width=_parse_limit(width, "full"),
            level=int(level),
        )

    @property
    def label(self):
        mm = "none" if self.truncate is None else self.truncate
        ww = "full" if self.width is None else self.width
        return f"rollout[l={self.lookahead},m={mm},w={ww},r={self.level}]"


@dataclass(frozen=True)
class ValueTable:
    """``values[k][x]`` is ``log P*_k(x)``; ``argmax[k][x]`` the successor attaining it."""

    values: np.ndarray
    argmax: np.ndarray

    @property
    def horizon(self):
        return self.values.shape[0] - 1


def policy_label(policy):
    if isinstance(policy, RolloutSpec):
        return policy.label
    if isinstance(policy, Policy):
        return policy.label
    return str(policy)


class Policy:
    """A (possibly time dependent) next-state rule with memoized decisions and tails.

    ``choose(x, k)`` returns ``(y, log p(y|x), cost)`` where ``cost`` is the nominal
    ``(comparisons, base_policy_steps)`` of making the decision from scratch. A
    memo hit returns the same nominal cost, so counters never depend on what was
    evaluated before.
    """

    label = "policy"
    stationary = False

    def __init__(self, chain, horizon):
        self.chain = chain
        self.horizon = horizon
        self._decisions = {}
        self._tails = {}

    @property
    def setup_cost(self):
        return (0, 0)

    def _choose(self, xx, kk):
        raise NotImplementedError

    def choose(self, xx, kk):
        key = xx if self.stationary else (xx, kk)
        hit = self._decisions.get(key)
        if hit is None:
            hit = self._choose(xx, kk)
            self._decisions[key] = hit
        return hit

    def _tail_key(self, xx, kk, steps):
        return (xx, steps) if self.stationary else (xx, kk, steps)

    def tail(self, xx, kk, steps):
        """Log-probability and cost of following the policy ``steps`` steps from ``xx`` at time ``kk``."""
        walked = []
        cur, tt, ss = xx, kk, steps
        while ss > 0 and self._tail_key(cur, tt, ss) not in self._tails:
            yy, lp, cost = self.choose(cur, tt)
            walked.append((cur, tt, ss, lp, cost))
            cur, tt, ss = yy, tt + 1, ss - 1
        if ss == 0:
            value, comp, nsteps = 0.0, 0, 0
        else:
            value, (comp, nsteps) = self._tails[self._tail_key(cur, tt, ss)]
        for cur, tt, ss, lp, cost in reversed(walked):
            value = log_mult(lp, value)
            comp += cost[0]
            nsteps += cost[1] + 1
            self._tails[self._tail_key(cur, tt, ss)] = (value, (comp, nsteps))
        return value, (comp, nsteps)


class GreedyPolicy(Policy):
    label = "greedy"
    stationary = True

    def __init__(self, chain, horizon=None):
        super().__init__(chain, horizon)

    def _choose(self, xx, kk):
        ranked = self.chain.ranked_successors(xx)
        yy, lp = ranked[0]
        return yy, lp, (len(ranked), 0)


class OptimalPolicy(Policy):
    label = "optimal"

    def __init__(self, model, horizon, table=None):
        if not isinstance(model, TransitionModel):
            raise CapabilityError(
                "the most likely policy needs an enumerable in-memory chain; "
                f"{type(model).__name__} only serves successor queries"
            )
        super().__init__(model, horizon)
        if table is None:
            table = optimal_tables(model, horizon)
        elif table.horizon != horizon:
            raise ValueError(
                f"value table built for N={table.horizon}, requested N={horizon}"
            )
        self.table = table

    @property
    def setup_cost(self):
        return (self.horizon * self.chain.edge_count, 0)

    def _choose(self, xx, kk):
        yy = int(self.table.argmax[kk][xx])
        return yy, self.chain.logprob(xx, yy), (0, 0)


class RolloutPolicy(Policy):
    """Rollout over a base policy: greedy at level 0, the level-1 rollout otherwise."""

    def __init__(self, chain, horizon, spec, base=None):
        super().__init__(chain, horizon)
        self.spec = spec
        if base is None:
            if spec.level == 0:
                base = GreedyPolicy(chain, horizon)
            else:
                base = RolloutPolicy(chain, horizon, replace(spec, level=spec.level - 1))
        self.base = base
        self._subtrees = {}

    @property
    def label(self):
        return self.spec.label

    def _candidates(self, xx):
        return self.chain.top_successors(xx, self.spec.width)

    def _subtree(self, yy, tt, depth, tail_steps):
        """Best continuation from ``yy`` at time ``tt``: ``depth`` free steps, then the base tail.

        Returns ``(log-prob, (comparisons, base steps), leaves)``.
        """
        if depth == 0:
            value, cost = self.base.tail(yy, tt, tail_steps)
            return value, cost, 1
        key = (yy, tt, depth, tail_steps)
        hit = self._subtrees.get(key)
        if hit is not None:
            return hit
        best = NEG_INF
        comp = nsteps = leaves = 0
        for cc, lp in self._candidates(yy):
            value, cost, nleaves = self._subtree(cc, tt + 1, depth - 1, tail_steps)
            best = max(best, log_mult(lp, value))
            comp += cost[0]
            nsteps += cost[1]
            leaves += nleaves
        hit = (best, (comp, nsteps), leaves)
        self._subtrees[key] = hit
        return hit

    def _choose(self, xx, kk):
        if not 0 <= kk < self.horizon:
            raise ValueError(f"time {kk} outside [0, {self.horizon})")
        depth = min(self.spec.lookahead, self.horizon - kk)
        remaining = self.horizon - kk - depth
        if self.spec.truncate is None:
            tail_steps = remaining
        else:
            tail_steps = min(self.spec.truncate, remaining)
        order_key = self.chain.order_key
        best_y = best_lp = best_score = None
        comp = nsteps = leaves = 0
        for yy, lp in self._candidates(xx):
            value, cost, nleaves = self._subtree(yy, kk + 1, depth - 1, tail_steps)
            score = log_mult(lp, value)
            comp += cost[0]
            nsteps += cost[1]
            leaves += nleaves
            if (
                best_y is None
                or score > best_score
                or (score == best_score and order_key(yy) < order_key(best_y))
            ):
                best_y, best_lp, best_score = yy, lp, score
        return best_y, best_lp, (comp + leaves, nsteps)


def make_policy(chain, horizon, policy):
    """Build the policy object for ``"greedy"``, ``"optimal"`` or a :class:`RolloutSpec`."""
    if isinstance(policy, Policy):
        return policy
    if isinstance(policy, RolloutSpec):
        return RolloutPolicy(chain, horizon, policy)
    if policy == "greedy":
        return GreedyPolicy(chain, horizon)
    if policy == "optimal":
        return OptimalPolicy(chain, horizon)
    raise ValueError(f"unknown policy {policy!r}")


def greedy_step(model, xx):
    model.check_state(xx)
    return model.ranked_successors(xx)[0][0]


def greedy_tail_logprob(model, yy, steps):
    model.check_state(yy)
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    value, _ = GreedyPolicy(model).tail(yy, 0, steps)
    return value


def optimal_tables(model, horizon):
    """Backward recursion ``P*_k(x) = max_y p(y|x) P*_{k+1}(y)`` in log space."""
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    degrees = np.diff(model.indptr)
    if np.any(degrees == 0):
        raise ValueError("every state needs at least one successor")
    nstates = model.state_count
    nedges = model.edge_count
    starts = model.indptr[:-1]
    row_of_edge = np.repeat(np.arange(nstates), degrees)
    positions = np.arange(nedges)
    values = np.zeros((horizon + 1, nstates))
    argmax = np.zeros((horizon, nstates), dtype=np.int64)
    for kk in range(horizon - 1, -1, -1):
        cand = model.logprobs + values[kk + 1][model.indices]
        best = np.maximum.reduceat(cand, starts)
        # successors are sorted, so the first maximizer has the smallest id
        first = np.minimum.reduceat(
            np.where(cand == best[row_of_edge], positions, nedges), starts
        )
        values[kk] = best
        argmax[kk] = model.indices[first]
    return ValueTable(values=values, argmax=argmax)


def optimal_trajectory(model, x0, horizon, table):
    model.check_state(x0)
    if table.horizon != horizon:
        raise ValueError(
            f"value table built for N={table.horizon}, requested N={horizon}"
        )
    states = []
    cur = x0
    for kk in range(horizon):
        cur = int(table.argmax[kk][cur])
        states.append(cur)
    return Trajectory(x0, tuple(states), trajectory_logprob(model, x0, states))


def rollout_step(model, xx, kk, horizon, spec, counters=None):
    model.check_state(xx)
    if not 0 <= kk < horizon:
        raise ValueError(f"time {kk} outside [0, {horizon})")
    yy, _, cost = RolloutPolicy(model, horizon, spec).choose(xx, kk)
    if counters is not None:
        counters.add(cost)
    return yy


def decode(chain, x0, horizon, policy="greedy"):
    """Apply ``policy`` from ``x0`` for ``horizon`` steps.

    Returns the :class:`Trajectory` and the :class:`CostCounters` of the run. A
    prebuilt :class:`Policy` may be passed to share its memo across initial states.
    """
    chain.check_state(x0)
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    pol = make_policy(chain, horizon, policy)
    if pol.horizon is not None and pol.horizon != horizon:
        raise ValueError(f"policy built for N={pol.horizon}, requested N={horizon}")
    counters = CostCounters().add(pol.setup_cost)
    states = []
    cur = x0
    try:
        for kk in range(horizon):
            cur, _, cost = pol.choose(cur, kk)
            counters.add(cost)
            states.append(cur)
    except ProtocolError as err:
        err.partial_states = list(states)
        raise
    traj = Trajectory(x0, tuple(states), trajectory_logprob(chain, x0, states))
    return traj, counters


def brute_force_optimal(model, x0, horizon, limit=BRUTE_FORCE_LIMIT):
    """Exhaustive search over every ``horizon``-step path; ties go to the smallest sequence."""
    model.check_state(x0)
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    qq = model.max_out_degree
    if qq**horizon > limit:
        raise RuntimeError(
            f"refusing exhaustive search over up to {qq}^{horizon} paths (limit {limit})"
        )
    if horizon == 0:
        return Trajectory(x0, (), 0.0)
    best_lp = None
    best_path = None
    path = []
    prefix = [0.0]
    stack = [iter(model.successors(x0))]
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            prefix.pop()
            if path:
                path.pop()
            continue
        yy, lp = nxt
        value = log_mult(prefix[-1], lp)
        if len(path) + 1 == horizon:
            if best_lp is None or value > best_lp:
                best_lp = value
                best_path = (*path, yy)
            continue
        path.append(yy)
        prefix.append(value)
        stack.append(iter(model.successors(yy)))
    return Trajectory(x0, best_path, trajectory_logprob(model, x0, best_path))


def _policy_from_args(args):
    if args.policy == "rollout":
        return RolloutSpec.from_strings(
            lookahead=args.lookahead,
            truncate=args.truncate,
            width=args.width,
            level=args.level,
        )
    return args.policy


def _print_decode_info(traj, counters, label):
    print(f"# policy: {label}")
    print("# states: " + " ".join(str(ii) for ii in traj.states))
    print(f"# log-probability: {traj.logprob:.12f}")
    print(f"# probability:     {traj.prob:.12e}")
    print(f"# geometric mean:  {geo_mean(traj.logprob, traj.horizon):.12f}")
    if counters is not None:
        print(f"# comparisons: {counters.comparisons}")
        print(f"# base policy steps: {counters.base_policy_steps}")


def _dump_result(output, traj, counters, label):
    info = traj.as_dict()
    info["policy"] = label
    info["geomean"] = geo_mean(traj.logprob, traj.horizon) if traj.horizon else 1.0
    if counters is not None:
        info.update(counters.as_dict())
    with open(output, "w") as fp:
        json.dump(info, fp, indent=4)


def add_module_subparsers(main_subparsers):
    parser_decode = main_subparsers.add_parser(
        "decode", help="decode a highly likely sequence from one initial state"
    )
    parser_decode.add_argument(
        "CHAIN", type=str, nargs="?", default=None, help="chain file"
    )
    parser_decode.add_argument(
        "-P",
        "--provider",
        type=str,
        default=None,
        help="command line of an external successor provider, used instead of CHAIN",
    )
    parser_decode.add_argument(
        "-k",
        "--top-k",
        type=str,
        default="all",
        help="number of successors requested from the provider, or 'all'",
    )
    parser_decode.add_argument(
        "-x", "--start", type=str, required=True, help="the initial state"
    )
    parser_decode.add_argument(
        "-N", "--horizon", type=int, required=True, help="number of steps"
    )
    parser_decode.add_argument(
        "-p",
        "--policy",
        type=str,
        default="greedy",
        choices=["greedy", "optimal", "rollout"],
        help="the selection policy",
    )
    parser_decode.add_argument(
        "-l", "--lookahead", type=int, default=1, help="rollout lookahead steps"
    )
    parser_decode.add_argument(
        "-m",
        "--truncate",
        type=str,
        default="none",
        help="rollout tail length, or 'none' to run to the horizon",
    )
    parser_decode.add_argument(
        "-w",
        "--width",
        type=str,
        default="full",
        help="number of most probable successors scored, or 'full'",
    )
    parser_decode.add_argument(
        "-r", "--level", type=int, default=0, help="rollout iteration level"
    )
    parser_decode.add_argument(
        "-o", "--output", type=str, default=None, help="write the result as json"
    )
    parser_decode.set_defaults(func=handle_decode)

    parser_oracle = main_subparsers.add_parser(
        "oracle", help="exhaustive most likely sequence for small chains"
    )
    parser_oracle.add_argument("CHAIN", type=str, help="chain file")
    parser_oracle.add_argument(
        "-x", "--start", type=int, required=True, help="the initial state"
    )
    parser_oracle.add_argument(
        "-N", "--horizon", type=int, required=True, help="number of steps"
    )
    parser_oracle.add_argument(
        "--limit",
        type=int,
        default=BRUTE_FORCE_LIMIT,
        help="refuse when the number of paths may exceed this",
    )
    parser_oracle.add_argument(
        "-o", "--output", type=str, default=None, help="write the result as json"
    )
    parser_oracle.set_defaults(func=handle_oracle)


def handle_decode(args):
    policy = _policy_from_args(args)
    label = policy_label(policy)
    if args.provider is not None:
        top_k = None if args.top_k == "all" else int(args.top_k)
        with ExternalProcessSource(shlex.split(args.provider)) as source:
            chain = ProviderChain(source, top_k=top_k)
            try:
                traj, counters = decode(chain, args.start, args.horizon, policy)
            except CapabilityError as err:
                print(f"# capability error: {err}")
                sys.exit(1)
            except ProtocolError as err:
                if err.partial_states is not None:
                    print("# partial states: " + " ".join(err.partial_states))
                raise
    else:
        if args.CHAIN is None:
            raise RuntimeError("either CHAIN or --provider must be given")
        model = read_chain(args.CHAIN)
        traj, counters = decode(model, int(args.start), args.horizon, policy)
    _print_decode_info(traj, counters, label)
    if args.output is not None:
        _dump_result(args.output, traj, counters, label)
    return traj


def handle_oracle(args):
    model = read_chain(args.CHAIN)
    traj = brute_force_optimal(model, args.start, args.horizon, limit=args.limit)
    _print_decode_info(traj, None, "brute-force")
    if args.output is not None:
        _dump_result(args.output, traj, None, "brute-force")
    return traj
