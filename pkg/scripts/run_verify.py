#!/usr/bin/env python3
"""Run the numerical certification battery and write JSON reports.

Equivalent to `byzsim verify`.
"""

import sys

from byzsim.cli import main

if __name__ == "__main__":
    sys.exit(main(["verify", *sys.argv[1:]]))
