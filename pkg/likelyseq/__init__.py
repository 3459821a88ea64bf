NAME = "likelyseq"
SHORT_CMD = "likelyseq"

__all__ = [
    "exp",
    "gen",
    "lib",
    "metrics",
    "policies",
    "provider",
]
