"""Shared test configuration.

Thread caps must land before numpy's first import to take effect.
"""

import os
import sys

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "4")

sys.path.insert(0, os.path.dirname(__file__))
