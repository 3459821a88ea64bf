#!/usr/bin/env python3

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from likelyseq.lib.chain import TransitionModel, write_chain

WEIGHT_RULE = "iid Uniform(0,1) weights normalized by their sum"
RNG_NAME = "numpy PCG64, default_rng([seed, row])"


@dataclass(frozen=True)
class GenSpec:
    state_count: int
    out_degree: int
    seed: int
    self_loops: bool = True

    def __post_init__(self):
        if self.state_count <= 0:
            raise ValueError(f"state_count must be positive, got {self.state_count}")
        pool = self.state_count if self.self_loops else self.state_count - 1
        if not 1 <= self.out_degree <= pool:
            raise ValueError(
                f"out_degree q={self.out_degree} must lie in [1, {pool}] "
                f"for {self.state_count} states (self_loops={self.self_loops})"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def branching_factor(self):
        """Percent of the states reachable in one step."""
        return 100.0 * self.out_degree / self.state_count

    def header_comments(self):
        return [
            "generator: likelyseq.gen",
            f"rng: {RNG_NAME}",
            f"seed: {self.seed}",
            f"out_degree: {self.out_degree} (branching factor {self.branching_factor:g}%)",
            f"self_loops: {str(self.self_loops).lower()}",
            f"weights: {WEIGHT_RULE}",
        ]


def _sample_distinct(rng, pool, qq):
    """Partial Fisher-Yates over ``range(pool)`` keeping only the swapped slots."""
    swapped = {}
    picked = []
    for ii in range(qq):
        jj = int(rng.integers(ii, pool))
        picked.append(swapped.get(jj, jj))
        swapped[jj] = swapped.get(ii, ii)
    return picked


def _positive_uniforms(rng, qq):
    ww = rng.random(qq)
    while np.any(ww == 0.0):
        zeros = ww == 0.0
        ww[zeros] = rng.random(int(np.count_nonzero(zeros)))
    return ww


def generate_row(spec, xx):
    rng = np.random.default_rng([spec.seed, xx])
    if spec.self_loops:
        succ = _sample_distinct(rng, spec.state_count, spec.out_degree)
    else:
        succ = [
            yy + 1 if yy >= xx else yy
            for yy in _sample_distinct(rng, spec.state_count - 1, spec.out_degree)
        ]
    ww = _positive_uniforms(rng, spec.out_degree)
    probs = ww / np.sum(ww)
    return sorted(zip(succ, (float(pp) for pp in probs)))


def generate_chain(spec):
    """Random chain with exactly ``spec.out_degree`` successors per state.

    Every row draws its successors and weights from its own stream seeded with
    ``(seed, row)``, so the result only depends on ``spec``.
    """
    nn = spec.state_count
    rows = [generate_row(spec, xx) for xx in range(nn)]
    indptr = np.arange(nn + 1) * spec.out_degree
    indices = [yy for row in rows for yy, _ in row]
    data = [pp for row in rows for _, pp in row]
    matrix = scipy.sparse.csr_matrix((data, indices, indptr), shape=(nn, nn))
    return TransitionModel.from_matrix(matrix)


def add_module_subparsers(main_subparsers):
    parser_gen = main_subparsers.add_parser(
        "gen", help="generate a random Markov chain with fixed out-degree"
    )
    parser_gen.add_argument(
        "-s", "--states", type=int, required=True, help="number of states"
    )
    parser_gen.add_argument(
        "-q", "--out-degree", type=int, required=True, help="successors per state"
    )
    parser_gen.add_argument(
        "--seed", type=int, default=0, help="seed of the random generator"
    )
    parser_gen.add_argument(
        "--no-self-loops",
        action="store_true",
        help="exclude x from the successors of x",
    )
    parser_gen.add_argument(
        "-o", "--output", type=str, default="chain.txt", help="output chain file"
    )
    parser_gen.set_defaults(func=handle_gen)


def handle_gen(args):
    spec = GenSpec(
        state_count=args.states,
        out_degree=args.out_degree,
        seed=args.seed,
        self_loops=not args.no_self_loops,
    )
    model = generate_chain(spec)
    write_chain(model, args.output, comments=spec.header_comments())
    print(
        "# chain of %d states, branching factor %g%%, written to %s"
        % (spec.state_count, spec.branching_factor, args.output)
    )
