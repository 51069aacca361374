#!/usr/bin/env python3
"""Reproduce the synthetic benchmark matrix and print the summary table.

Equivalent to `byzsim table1`; kept as a script entry point for
experiment workflows.
"""

import sys

from byzsim.cli import main

if __name__ == "__main__":
    sys.exit(main(["table1", *sys.argv[1:]]))
