"""Run the acceptance suite and print its per-criterion PASS/FAIL summary.

    python3 scripts/run_acceptance.py [-k EXPR]

Extra arguments are passed to pytest. The full suite takes roughly 6 minutes
on one core; criterion 5 is known to fail (see README).
"""
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(pytest.main([str(ROOT / "tests" / "test_acceptance.py"), "-v", "-rN", *sys.argv[1:]]))
