"""
Entry point for running rcmlab as a module.

Usage:
    python -m rcmlab kernel --config kernel.json --out results/kernel
    python -m rcmlab profile relax-3d --seed 1
"""

import sys

from rcmlab.cli import main

if __name__ == "__main__":
    sys.exit(main())
