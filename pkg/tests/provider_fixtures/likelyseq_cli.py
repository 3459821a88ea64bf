#!/usr/bin/env python3
"""Run the likelyseq command line from the source tree, e.g. ``likelyseq_cli.py serve CHAIN``."""

import os
import sys

sys.path.insert(
    0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
)

from likelyseq.main import main

if __name__ == "__main__":
    main()
