"""Test-wide path setup so the oracle helpers import as a plain module."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
