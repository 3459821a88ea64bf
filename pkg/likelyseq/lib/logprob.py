"""Log-domain probability arithmetic.

Every probability handled by the package is stored as its natural logarithm.
Products become sums and a probability of zero is ``-inf``, which absorbs any
further product.
"""

import math

NEG_INF = float("-inf")


def to_logprob(p):
    """Convert a probability in [0, 1] to log space."""
    if p < 0 or p > 1:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p == 0:
        return NEG_INF
    return math.log(p)


def to_prob(lp):
    """Convert a log-probability back to probability space."""
    if lp == NEG_INF:
        return 0.0
    return math.exp(lp)


def log_mult(*lps):
    """Multiply probabilities given in log space."""
    total = 0.0
    for lp in lps:
        if lp == NEG_INF:
            return NEG_INF
        total += lp
    return total


def is_logprob(lp):
    return lp == NEG_INF or (not math.isnan(lp) and lp <= 0.0)
