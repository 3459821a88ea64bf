#!/usr/bin/env python3

import hashlib
import os
import pathlib
import shutil

import numpy as np


def create_path(path):
    """Create a fresh job folder, moving an existing one to ``<path>.bkNNN``."""
    path += "/"
    if os.path.isdir(path):
        dirname = os.path.dirname(path)
        counter = 0
        while True:
            bk_dirname = dirname + ".bk%03d" % counter
            if not os.path.isdir(bk_dirname):
                shutil.move(dirname, bk_dirname)
                break
            counter += 1
    os.makedirs(path)
    return os.path.abspath(path)


def get_file_md5(file_path):
    return hashlib.md5(pathlib.Path(file_path).read_bytes()).hexdigest()


def _parse_one_str(in_s):
    fmt_s = in_s.split(":")
    if len(fmt_s) == 1:
        return [int(fmt_s[0])]
    if len(fmt_s) == 2:
        fmt_s.append("1")
    if len(fmt_s) != 3:
        raise RuntimeError(f"cannot parse integer range {in_s!r}")
    begin, end, step = (int(ii) for ii in fmt_s)
    return list(np.arange(begin, end, step))


def parse_int_seq(in_s):
    """Parse ``"1:6"``, ``"1:6:2"``, ``"3"``, lists of those, or lists of ints.

    Ranges follow python ``range`` semantics (end excluded).
    """
    if isinstance(in_s, (int, np.integer)):
        return [int(in_s)]
    if isinstance(in_s, str):
        return [int(ii) for ii in _parse_one_str(in_s)]
    if isinstance(in_s, list):
        all_l = []
        for ii in in_s:
            all_l.extend(parse_int_seq(ii))
        return all_l
    raise RuntimeError(
        "the type of seq should be one of: int, string, list_of_strings, list_of_ints"
    )
