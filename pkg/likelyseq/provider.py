#!/usr/bin/env python3
"""Next-state probability sources.

A source answers successor queries for opaque string state keys. Two kinds
exist: :class:`InMemorySource` wraps a stored chain, and
:class:`ExternalProcessSource` talks to a child process over a line protocol
on its standard input and output::

    request:  {"op": "successors", "state": "12", "topK": 10}
    reply:    {"entries": [["3", 0.5], ["12", 0.25]]}
    failure:  {"error": "unknown state"}

:class:`ProviderChain` turns any source into the chain view consumed by the
greedy and rollout policies.
"""

import contextlib
import json
import logging
import math
import subprocess
import sys
import warnings
from dataclasses import dataclass
from typing import Optional

from likelyseq.lib.chain import read_chain
from likelyseq.lib.logprob import NEG_INF, to_logprob

logger = logging.getLogger(__name__)

SUM_TOL = 1e-6
UNKNOWN_STATE = "unknown state"


class ProtocolError(RuntimeError):
    def __init__(self, message, partial_states=None):
        super().__init__(message)
        self.partial_states = partial_states


def natural_key(key):
    """Decimal keys sort numerically and before any other key, which sort as text."""
    if key.isascii() and key.isdigit():
        return (0, int(key), "")
    return (1, 0, key)


@dataclass(frozen=True)
class SuccessorQuery:
    state_key: str
    top_k: Optional[int] = None

    def __post_init__(self):
        if self.top_k is not None and self.top_k < 1:
            raise ValueError(f"topK must be >= 1 or all, got {self.top_k}")

    def as_request(self):
        return {
            "op": "successors",
            "state": self.state_key,
            "topK": "all" if self.top_k is None else self.top_k,
        }


@dataclass(frozen=True)
class SuccessorList:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def total(self):
        return math.fsum(pp for _, pp in self.entries)


def check_successor_list(entries):
    """Validate reply entries; raises :class:`ProtocolError` on any contract violation."""
    if not entries:
        raise ProtocolError("reply has no entries")
    for key, pp in entries:
        if not 0 < pp <= 1:
            raise ProtocolError(f"probability {pp} of {key!r} not in (0, 1]")
    for (k0, p0), (k1, p1) in zip(entries, entries[1:]):
        if p1 > p0 or (p1 == p0 and natural_key(k1) <= natural_key(k0)):
            raise ProtocolError("entries not sorted")
    total = math.fsum(pp for _, pp in entries)
    if total > 1 + SUM_TOL:
        raise ProtocolError(f"probabilities sum to {total!r} > 1")
    if total > 1:
        warnings.warn(f"successor probabilities sum to {total!r}", RuntimeWarning)
    return SuccessorList(tuple(entries))


class InMemorySource:
    """Enumerable source over a :class:`~likelyseq.lib.chain.TransitionModel`."""

    def __init__(self, model):
        self.model = model

    def _state(self, key):
        if not (key.isascii() and key.isdigit()):
            raise KeyError(key)
        xx = int(key)
        if xx >= self.model.state_count:
            raise KeyError(key)
        return xx

    def successors(self, query):
        xx = self._state(query.state_key)
        probs = dict(self.model.row(xx))
        ranked = self.model.top_successors(xx, query.top_k)
        return SuccessorList(tuple((str(yy), probs[yy]) for yy, _ in ranked))


class ExternalProcessSource:
    """Generative source served by a child process, one request per line.

    Use as a context manager so the child is shut down.
    """

    def __init__(self, command, timeout=10):
        self.command = list(command)
        self.timeout = timeout
        logger.debug("starting provider %s", self.command)
        self.proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        with contextlib.suppress(OSError):
            self.proc.stdin.close()
        try:
            self.proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self.proc.stdout.close()
        logger.debug("provider exited with code %s", self.proc.returncode)

    def _exchange(self, request):
        line = json.dumps(request)
        logger.debug("provider <- %s", line)
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except OSError as err:
            raise ProtocolError(f"provider exited (code {self.proc.poll()})") from err
        reply = self.proc.stdout.readline()
        logger.debug("provider -> %s", reply.rstrip("\n"))
        if not reply:
            raise ProtocolError(f"provider exited (code {self.proc.poll()})")
        try:
            return json.loads(reply)
        except json.JSONDecodeError as err:
            raise ProtocolError(f"malformed reply {reply.strip()!r}") from err

    def successors(self, query):
        reply = self._exchange(query.as_request())
        if not isinstance(reply, dict):
            raise ProtocolError(f"malformed reply {reply!r}")
        if "error" in reply:
            if reply["error"] == UNKNOWN_STATE:
                raise KeyError(query.state_key)
            raise ProtocolError(f"provider error: {reply['error']}")
        raw = reply.get("entries")
        if not isinstance(raw, list):
            raise ProtocolError("reply has no entries")
        entries = []
        for item in raw:
            if (
                not isinstance(item, list)
                or len(item) != 2
                or not isinstance(item[0], (str, int))
                or isinstance(item[1], bool)
                or not isinstance(item[1], (int, float))
            ):
                raise ProtocolError(f"malformed entry {item!r}")
            entries.append((str(item[0]), float(item[1])))
        return check_successor_list(entries)


def query_successors(source, query):
    return source.successors(query)


class ProviderChain:
    """Chain view over a successor source, asking each state key once.

    ``top_k`` bounds every query; ``None`` requests all successors.
    """

    def __init__(self, source, top_k=None):
        self.source = source
        self.top_k = top_k
        self._ranked = {}
        self._logp = {}

    def check_state(self, key):
        if not isinstance(key, str) or not key:
            raise ValueError(f"state key must be a non-empty string, got {key!r}")

    def ranked_successors(self, key):
        ranked = self._ranked.get(key)
        if ranked is None:
            reply = query_successors(self.source, SuccessorQuery(key, self.top_k))
            ranked = tuple(
                (yy, to_logprob(pp)) for yy, pp in reply.entries
            )
            self._ranked[key] = ranked
            self._logp[key] = dict(ranked)
        return ranked

    def top_successors(self, key, width=None):
        ranked = self.ranked_successors(key)
        if width is None:
            return ranked
        return ranked[:width]

    def order_key(self, key):
        return natural_key(key)

    def logprob(self, xx, yy):
        self.ranked_successors(xx)
        return self._logp[xx].get(yy, NEG_INF)


def serve_chain(model, instream, outstream):
    """Answer successor queries for ``model`` until ``instream`` closes."""
    source = InMemorySource(model)
    for line in instream:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if msg.get("op") != "successors":
                raise ValueError(f"unknown op {msg.get('op')!r}")
            top_k = msg.get("topK", "all")
            query = SuccessorQuery(
                str(msg["state"]), None if top_k == "all" else int(top_k)
            )
        except (ValueError, KeyError, TypeError, AttributeError) as err:
            out = {"error": f"bad request: {err}"}
        else:
            try:
                reply = source.successors(query)
            except KeyError:
                out = {"error": UNKNOWN_STATE}
            else:
                out = {"entries": [[kk, pp] for kk, pp in reply.entries]}
        outstream.write(json.dumps(out) + "\n")
        outstream.flush()


def add_module_subparsers(main_subparsers):
    parser_serve = main_subparsers.add_parser(
        "serve", help="serve successor queries for a chain file on stdin/stdout"
    )
    parser_serve.add_argument("CHAIN", type=str, help="chain file")
    parser_serve.set_defaults(func=handle_serve)


def handle_serve(args):
    model = read_chain(args.CHAIN)
    serve_chain(model, sys.stdin, sys.stdout)
