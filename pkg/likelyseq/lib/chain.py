#!/usr/bin/env python3
"""Finite Markov chains, trajectory probabilities and the chain file format.

A chain is stored in compressed-sparse-row form: ``indptr``, ``indices`` and
``probs`` hold, for every state ``x``, the successors ``y`` with
``p(y|x) > 0``. Valid rows list their successors in ascending id order.
"""

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from likelyseq.lib.logprob import NEG_INF, log_mult, to_prob

STOCHASTIC_TOL = 1e-9
CHAIN_MAGIC = "MCHAIN 1"


class ChainFormatError(ValueError):
    def __init__(self, reason, lineno):
        super().__init__(f"{reason}, line {lineno}")
        self.reason = reason
        self.lineno = lineno


Violation = namedtuple("Violation", ["row", "reason"])


@dataclass(frozen=True)
class Trajectory:
    start: int
    states: tuple
    logprob: float

    @property
    def horizon(self):
        return len(self.states)

    @property
    def prob(self):
        return to_prob(self.logprob)

    def as_dict(self):
        return {
            "start": self.start,
            "states": list(self.states),
            "logprob": self.logprob,
        }


class TransitionModel:
    """Row-stochastic sparse transition structure ``p(y|x)`` over integer states.

    Instances are immutable. Use :meth:`from_rows`, :meth:`from_edges` or
    :meth:`from_matrix` to build one and :func:`validate_model` to check it.
    """

    def __init__(self, state_count, indptr, indices, probs):
        self.state_count = int(state_count)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        # math.log, as for provider replies, so both views agree bitwise
        self.logprobs = np.array(
            [math.log(pp) if pp > 0 else NEG_INF for pp in self.probs.tolist()],
            dtype=np.float64,
        )
        for arr in (self.indptr, self.indices, self.probs, self.logprobs):
            arr.setflags(write=False)
        self._ranked = {}

    @classmethod
    def from_rows(cls, state_count, rows):
        """Build from one list of ``(successor, probability)`` per state, kept as given."""
        indptr = [0]
        indices = []
        probs = []
        for row in rows:
            for yy, pp in row:
                indices.append(int(yy))
                probs.append(float(pp))
            indptr.append(len(indices))
        return cls(state_count, indptr, indices, probs)

    @classmethod
    def from_edges(cls, state_count, edges):
        rows = [[] for _ in range(state_count)]
        for xx, yy, pp in edges:
            rows[xx].append((yy, pp))
        return cls.from_rows(state_count, [sorted(row) for row in rows])

    @classmethod
    def from_matrix(cls, matrix):
        """Build from a square scipy sparse matrix or dense array of probabilities."""
        csr = scipy.sparse.csr_matrix(matrix)
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"transition matrix must be square, got {csr.shape}")
        csr.eliminate_zeros()
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data)

    @property
    def edge_count(self):
        return int(self.indptr[-1])

    @property
    def max_out_degree(self):
        return int(np.max(np.diff(self.indptr)))

    def check_state(self, xx):
        if isinstance(xx, (bool, np.bool_)) or not isinstance(xx, (int, np.integer)):
            raise ValueError(f"state id must be an integer, got {xx!r}")
        if not 0 <= xx < self.state_count:
            raise ValueError(
                f"state id {xx} out of range for a chain of {self.state_count} states"
            )

    def row(self, xx):
        """Successors of ``xx`` as a list of ``(y, p)`` in stored order."""
        lo, hi = self.indptr[xx], self.indptr[xx + 1]
        return [
            (int(yy), float(pp))
            for yy, pp in zip(self.indices[lo:hi], self.probs[lo:hi])
        ]

    def successors(self, xx):
        """Successors of ``xx`` as ``(y, log p)`` in stored order."""
        lo, hi = self.indptr[xx], self.indptr[xx + 1]
        return [
            (int(yy), float(lp))
            for yy, lp in zip(self.indices[lo:hi], self.logprobs[lo:hi])
        ]

    def out_degree(self, xx):
        return int(self.indptr[xx + 1] - self.indptr[xx])

    def ranked_successors(self, xx):
        """Successors of ``xx`` as ``(y, log p)``, most probable first, ties by smaller id."""
        ranked = self._ranked.get(xx)
        if ranked is None:
            lo, hi = self.indptr[xx], self.indptr[xx + 1]
            ids = self.indices[lo:hi]
            order = np.lexsort((ids, -self.probs[lo:hi]))
            ranked = tuple(
                (int(ids[ii]), float(self.logprobs[lo + ii])) for ii in order
            )
            self._ranked[xx] = ranked
        return ranked

    def top_successors(self, xx, width=None):
        ranked = self.ranked_successors(xx)
        if width is None:
            return ranked
        return ranked[:width]

    def order_key(self, xx):
        return xx

    def logprob(self, xx, yy):
        lo, hi = self.indptr[xx], self.indptr[xx + 1]
        pos = lo + int(np.searchsorted(self.indices[lo:hi], yy))
        if pos < hi and self.indices[pos] == yy:
            return float(self.logprobs[pos])
        return NEG_INF

    def __eq__(self, other):
        if not isinstance(other, TransitionModel):
            return NotImplemented
        return (
            self.state_count == other.state_count
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.probs, other.probs)
        )

    def __hash__(self):
        return hash((self.state_count, self.probs.tobytes(), self.indices.tobytes()))

    def __repr__(self):
        return f"TransitionModel(states={self.state_count}, edges={self.edge_count})"


def validate_model(model):
    """Return every invariant violation of ``model``; an empty list means valid."""
    violations = []
    nrows = len(model.indptr) - 1
    if nrows != model.state_count:
        violations.append(
            Violation(None, f"{nrows} rows for a chain of {model.state_count} states")
        )
    for xx in range(nrows):
        row = model.row(xx)
        if not row:
            violations.append(Violation(xx, f"row {xx} is empty"))
            continue
        ids = [yy for yy, _ in row]
        for yy in ids:
            if not 0 <= yy < model.state_count:
                violations.append(
                    Violation(xx, f"row {xx} successor {yy} out of range")
                )
        if len(set(ids)) != len(ids):
            violations.append(Violation(xx, f"row {xx} has duplicate successors"))
        elif any(aa > bb for aa, bb in zip(ids, ids[1:])):
            violations.append(Violation(xx, f"row {xx} not sorted ascending"))
        for yy, pp in row:
            if not pp > 0 or pp > 1:
                violations.append(
                    Violation(xx, f"row {xx} probability {pp} of successor {yy} not in (0, 1]")
                )
        total = math.fsum(pp for _, pp in row)
        if abs(total - 1.0) > STOCHASTIC_TOL:
            violations.append(Violation(xx, f"row {xx} not stochastic (sum {total!r})"))
    return violations


def transition_logprob(model, xx, yy):
    model.check_state(xx)
    model.check_state(yy)
    return model.logprob(xx, yy)


def trajectory_logprob(model, start, states):
    """Log-probability of visiting ``states`` in order after ``start``."""
    model.check_state(start)
    for yy in states:
        model.check_state(yy)
    total = 0.0
    cur = start
    for yy in states:
        total = log_mult(total, model.logprob(cur, yy))
        cur = yy
    return total


def format_prob(pp):
    """Shortest decimal string that reads back to the same double."""
    return np.format_float_positional(pp, unique=True, trim="-")


def encode_chain(model, comments=()):
    lines = [CHAIN_MAGIC, f"states {model.state_count}"]
    lines.extend(f"# {cc}" for cc in comments)
    for xx in range(model.state_count):
        for yy, pp in model.row(xx):
            lines.append(f"{xx} {yy} {format_prob(pp)}")
    return "\n".join(lines) + "\n"


def _check_row_closed(row_x, row, lineno):
    total = math.fsum(pp for _, pp in row)
    if abs(total - 1.0) > STOCHASTIC_TOL:
        raise ChainFormatError(f"row {row_x} not stochastic", lineno)


def decode_chain(text):
    """Parse a chain document; raises :class:`ChainFormatError` on any defect."""
    state_count = None
    header_seen = False
    rows = None
    cur_x = -1
    last_y = -1
    lineno = 0
    last_edge_line = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        words = line.split()
        if not words or line.startswith("#"):
            continue
        if not header_seen:
            if line.strip() != CHAIN_MAGIC:
                raise ChainFormatError("malformed header", lineno)
            header_seen = True
            continue
        if state_count is None:
            if len(words) != 2 or words[0] != "states":
                raise ChainFormatError("malformed header", lineno)
            try:
                state_count = int(words[1])
            except ValueError as ee:
                raise ChainFormatError("malformed header", lineno) from ee
            if state_count <= 0:
                raise ChainFormatError("state count must be positive", lineno)
            rows = [[] for _ in range(state_count)]
            continue
        if len(words) != 3:
            raise ChainFormatError("malformed edge", lineno)
        try:
            xx, yy, pp = int(words[0]), int(words[1]), float(words[2])
        except ValueError as ee:
            raise ChainFormatError("malformed edge", lineno) from ee
        if not (0 <= xx < state_count and 0 <= yy < state_count):
            raise ChainFormatError("state id out of range", lineno)
        if not 0 < pp <= 1:
            raise ChainFormatError("probability out of range", lineno)
        if xx == cur_x and yy == last_y:
            raise ChainFormatError("duplicate edge", lineno)
        if xx < cur_x or (xx == cur_x and yy < last_y):
            raise ChainFormatError("edge out of canonical order", lineno)
        if xx != cur_x:
            if cur_x >= 0:
                _check_row_closed(cur_x, rows[cur_x], last_edge_line[cur_x])
            cur_x = xx
        last_y = yy
        rows[xx].append((yy, pp))
        last_edge_line[xx] = lineno
    if state_count is None:
        raise ChainFormatError("malformed header", lineno)
    if cur_x >= 0:
        _check_row_closed(cur_x, rows[cur_x], last_edge_line[cur_x])
    for xx, row in enumerate(rows):
        if not row:
            raise ChainFormatError(f"row {xx} has no successors", lineno)
    return TransitionModel.from_rows(state_count, rows)


def read_chain(path):
    with open(path, encoding="utf-8") as fp:
        return decode_chain(fp.read())


def write_chain(model, path, comments=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(encode_chain(model, comments))
