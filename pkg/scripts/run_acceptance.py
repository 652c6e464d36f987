"""Run the acceptance suite and show the per-criterion PASS/FAIL summary.

    python scripts/run_acceptance.py [--fast]   # --fast skips the desk-scale training runs
"""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    args = [str(root / "tests" / "test_acceptance.py"), "-q", "-rx"]
    if "--fast" in sys.argv[1:]:
        args += ["-m", "not slow"]
    sys.exit(pytest.main(args))
