import os

# Configuration variables
DEFAULT_LOWER = (0.01, 0.01)
DEFAULT_UPPER = (100.01, 100.01)
DEFAULT_X0 = (50.0, 50.0)
DEFAULT_MIN_MESH = 0.009
DEFAULT_XI = 0.25  # fraction of the evaluation budget granted to VNS
DEFAULT_SHRINK_FACTOR = 0.5
DEFAULT_BASELINE_BUDGET = 100  # also the default for MADS runs that tune an SVM
DEFAULT_FOLDS = 3

# Starting points used to compare all tuners
PUBLISHED_COMPARISON_X0 = [
    (0.5, 0.5),
    (10.0, 10.0),
    (50.0, 50.0),
    (90.0, 90.0),
    (1.0, 90.0),
    (90.0, 1.0),
]

# Sweep grids
PUBLISHED_XI_GRID = [0.25, 0.5, 0.75, 0.9]
PUBLISHED_MIN_MESH_GRID = [9e-1, 9e-3, 9e-7]
PUBLISHED_X0_GRID = [
    (0.5, 0.5),
    (50.0, 50.0),
    (90.0, 90.0),
    (1.0, 90.0),
    (90.0, 1.0),
    (70.93, 75.21),
    (50.60, 64.29),
    (25.21, 79.05),
    (89.59, 13.49),
    (2.37, 57.91),
]

# Worker threads for repeats and stage evaluations; unset means single-threaded
ORTHOMADS_THREADS = max(1, int(os.environ.get("ORTHOMADS_THREADS", "1") or 1))
