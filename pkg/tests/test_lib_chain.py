import math
import os
import shutil
import unittest

import numpy as np
import scipy.sparse
from context import likelyseq
from hypothesis import given, settings
from hypothesis import strategies as st

from chain_common import small_chains

from likelyseq.lib.chain import (
    ChainFormatError,
    TransitionModel,
    decode_chain,
    encode_chain,
    read_chain,
    trajectory_logprob,
    transition_logprob,
    validate_model,
    write_chain,
)
from likelyseq.lib.logprob import NEG_INF
from likelyseq.lib.utils import get_file_md5

benchmark_dir = os.path.join(os.path.dirname(__file__), "benchmark_chain")


def two_state(pp):
    return TransitionModel.from_rows(2, [[(0, pp), (1, 1 - pp)], [(0, 1.0)]])


class TestValidateModel(unittest.TestCase):
    def test_valid(self):
        self.assertEqual(validate_model(two_state(0.6)), [])

    def test_not_stochastic(self):
        model = TransitionModel.from_rows(2, [[(0, 0.5), (1, 0.4)], [(0, 1.0)]])
        violations = validate_model(model)
        self.assertEqual(len(violations), 1)
        self.assertEqual(violations[0].row, 0)
        self.assertIn("row 0 not stochastic", violations[0].reason)

    def test_not_sorted(self):
        model = TransitionModel.from_rows(2, [[(1, 0.5), (0, 0.5)], [(0, 1.0)]])
        reasons = [vv.reason for vv in validate_model(model)]
        self.assertEqual(reasons, ["row 0 not sorted ascending"])

    def test_empty_row(self):
        model = TransitionModel.from_rows(2, [[(0, 1.0)], []])
        reasons = [vv.reason for vv in validate_model(model)]
        self.assertEqual(reasons, ["row 1 is empty"])

    def test_bad_probability(self):
        model = TransitionModel.from_rows(1, [[(0, 0.0)]])
        reasons = [vv.reason for vv in validate_model(model)]
        self.assertEqual(len(reasons), 2)
        self.assertIn("not in (0, 1]", reasons[0])

    def test_duplicates_and_range(self):
        model = TransitionModel.from_rows(2, [[(0, 0.5), (0, 0.5)], [(3, 1.0)]])
        reasons = [vv.reason for vv in validate_model(model)]
        self.assertIn("row 0 has duplicate successors", reasons)
        self.assertIn("row 1 successor 3 out of range", reasons)


class TestTransitionModel(unittest.TestCase):
    def setUp(self):
        self.model = two_state(0.6)

    def test_logprob(self):
        self.assertAlmostEqual(transition_logprob(self.model, 0, 1), math.log(0.4), places=12)
        self.assertEqual(transition_logprob(self.model, 1, 1), float("-inf"))
        self.assertEqual(transition_logprob(self.model, 1, 0), 0.0)

    def test_logprob_bad_state(self):
        with self.assertRaises(ValueError):
            transition_logprob(self.model, 0, 2)
        with self.assertRaises(ValueError):
            transition_logprob(self.model, -1, 0)

    def test_ranked_successors(self):
        model = TransitionModel.from_rows(
            3, [[(0, 0.25), (1, 0.5), (2, 0.25)], [(1, 1.0)], [(2, 1.0)]]
        )
        self.assertEqual([yy for yy, _ in model.ranked_successors(0)], [1, 0, 2])
        self.assertEqual([yy for yy, _ in model.top_successors(0, 2)], [1, 0])
        self.assertEqual(model.top_successors(0, None), model.ranked_successors(0))

    def test_from_edges(self):
        model = TransitionModel.from_edges(2, [(1, 0, 1.0), (0, 1, 0.4), (0, 0, 0.6)])
        self.assertEqual(model, self.model)

    def test_from_matrix(self):
        dense = np.array([[0.6, 0.4], [1.0, 0.0]])
        model = TransitionModel.from_matrix(scipy.sparse.csr_matrix(dense))
        self.assertEqual(model, self.model)
        self.assertEqual(model.edge_count, 3)
        self.assertEqual(model.row(1), [(0, 1.0)])

    def test_from_matrix_not_square(self):
        with self.assertRaises(ValueError):
            TransitionModel.from_matrix(np.ones((2, 3)) / 3)

    def test_read_only(self):
        with self.assertRaises(ValueError):
            self.model.probs[0] = 0.5


class TestTrajectoryLogprob(unittest.TestCase):
    def setUp(self):
        self.model = two_state(0.6)

    def test_greedy_path(self):
        lp = trajectory_logprob(self.model, 0, [0, 0, 0, 0])
        self.assertAlmostEqual(lp, 4 * math.log(0.6), places=12)
        self.assertAlmostEqual(math.exp(lp), 0.1296, places=12)

    def test_alternating_path(self):
        lp = trajectory_logprob(self.model, 0, [1, 0, 1, 0])
        self.assertAlmostEqual(math.exp(lp), 0.16, places=12)

    def test_empty(self):
        self.assertEqual(trajectory_logprob(self.model, 0, []), 0.0)

    def test_impossible(self):
        self.assertEqual(trajectory_logprob(self.model, 1, [1, 0]), float("-inf"))

    def test_bad_state(self):
        with self.assertRaises(ValueError):
            trajectory_logprob(self.model, 0, [0, 2])


@st.composite
def chains_with_paths(draw, max_len=8):
    """A chain and a path through it, mostly along edges."""
    model = draw(small_chains())
    nn = model.state_count
    start = draw(st.integers(min_value=0, max_value=nn - 1))
    path = []
    cur = start
    for _ in range(draw(st.integers(min_value=0, max_value=max_len))):
        if draw(st.integers(min_value=0, max_value=3)) == 0:
            cur = draw(st.integers(min_value=0, max_value=nn - 1))
        else:
            succ = model.row(cur)
            cur = succ[draw(st.integers(min_value=0, max_value=len(succ) - 1))][0]
        path.append(cur)
    return model, start, path


class TestChainProperties(unittest.TestCase):
    @settings(max_examples=80, deadline=None)
    @given(chains_with_paths(), st.integers(min_value=0, max_value=8))
    def test_prefix_additivity(self, case, cut):
        model, start, path = case
        cut = min(cut, len(path))
        head, rest = path[:cut], path[cut:]
        mid = head[-1] if head else start
        whole = trajectory_logprob(model, start, path)
        split = trajectory_logprob(model, start, head) + trajectory_logprob(model, mid, rest)
        if whole == NEG_INF:
            self.assertEqual(split, NEG_INF)
        else:
            self.assertAlmostEqual(whole, split, places=9)

    @settings(max_examples=80, deadline=None)
    @given(chains_with_paths())
    def test_direct_product(self, case):
        model, start, path = case
        direct = 1.0
        cur = start
        for yy in path:
            direct *= dict(model.row(cur)).get(yy, 0.0)
            cur = yy
        prob = math.exp(trajectory_logprob(model, start, path))
        if direct == 0.0:
            self.assertEqual(prob, 0.0)
        else:
            self.assertLessEqual(abs(prob - direct), 1e-12 * direct)

    @settings(max_examples=60, deadline=None)
    @given(small_chains())
    def test_rows_sum_to_one(self, model):
        for xx in range(model.state_count):
            total = math.fsum(
                math.exp(transition_logprob(model, xx, yy)) for yy in range(model.state_count)
            )
            self.assertLessEqual(abs(total - 1.0), 1e-9, msg=xx)


class TestChainCodec(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        os.makedirs("tmp_chain/", exist_ok=True)

    def test_encode(self):
        text = encode_chain(two_state(0.6))
        self.assertEqual(text, "MCHAIN 1\nstates 2\n0 0 0.6\n0 1 0.4\n1 0 1\n")

    def test_benchmark_files(self):
        for name in ("ts_0.6", "ts_0.7", "tr_0.6"):
            model = read_chain(os.path.join(benchmark_dir, name + ".chain"))
            self.assertEqual(validate_model(model), [])
            test_file = os.path.join("tmp_chain", name + ".chain")
            write_chain(model, test_file)
            bench_file = os.path.join(benchmark_dir, name + ".chain")
            self.assertEqual(get_file_md5(test_file), get_file_md5(bench_file))

    def test_comments(self):
        model = read_chain(os.path.join(benchmark_dir, "ts_0.6_comments.chain"))
        self.assertEqual(model, two_state(0.6))
        text = encode_chain(model, comments=["seed: 3"])
        self.assertEqual(text.split("\n")[2], "# seed: 3")
        self.assertEqual(decode_chain(text), model)

    def test_round_trip_precision(self):
        rng = np.random.default_rng(7)
        ww = rng.random(5)
        probs = ww / ww.sum()
        model = TransitionModel.from_rows(5, [list(enumerate(probs))] * 5)
        self.assertEqual(decode_chain(encode_chain(model)), model)

    def test_out_of_range(self):
        with self.assertRaises(ChainFormatError) as cm:
            decode_chain("MCHAIN 1\nstates 2\n0 0 0.5\n0 5 0.5\n1 0 1\n")
        self.assertEqual(str(cm.exception), "state id out of range, line 4")
        self.assertEqual(cm.exception.lineno, 4)

    def test_format_errors(self):
        cases = [
            ("CHAIN 1\nstates 2\n", "malformed header"),
            ("MCHAIN 1\nstates 0\n", "state count must be positive"),
            ("MCHAIN 1\nstates 2\n0 0\n", "malformed edge"),
            ("MCHAIN 1\nstates 1\n0 0 1.5\n", "probability out of range"),
            ("MCHAIN 1\nstates 1\n0 0 0.5\n0 0 0.5\n", "duplicate edge"),
            ("MCHAIN 1\nstates 2\n0 1 0.5\n0 0 0.5\n1 0 1\n", "edge out of canonical order"),
            ("MCHAIN 1\nstates 2\n0 0 0.5\n1 0 1\n", "row 0 not stochastic"),
            ("MCHAIN 1\nstates 2\n0 0 1\n", "row 1 has no successors"),
            ("MCHAIN 1\n", "malformed header"),
        ]
        for text, reason in cases:
            with self.assertRaises(ChainFormatError, msg=text) as cm:
                decode_chain(text)
            self.assertEqual(cm.exception.reason, reason, msg=text)

    def test_not_stochastic_line(self):
        with self.assertRaises(ChainFormatError) as cm:
            decode_chain("MCHAIN 1\nstates 2\n0 0 0.5\n0 1 0.4\n1 0 1\n")
        self.assertEqual(cm.exception.lineno, 4)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree("tmp_chain/")


if __name__ == "__main__":
    unittest.main()
