#!/usr/bin/env python3
"""Checkout entry point.

Runs the ``dual_radio_handoff`` CLI from ``src/`` without installing the package.
Prefer the ``handoff-sim`` console command once installed (``pip``/``uv``/``uvx``).
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

from dual_radio_handoff.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
