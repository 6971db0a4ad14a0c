"""
Configuration for the lattice workbench.
Values can be overridden from the environment or from a .env file in the working directory.
"""
import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

DEFAULT_SEED = int(os.environ.get("LATTICE_WORKBENCH_SEED", "0"))
LOG_LEVEL = os.environ.get("LATTICE_WORKBENCH_LOG_LEVEL", "INFO")

# Numerical tolerances
DET_TOLERANCE = 1e-12      # |det B| at or below this is treated as singular
CONDITION_EPS = 1e-9       # slack on the size and Lovász conditions
DEGENERATE_SCORE_EPS = 1e-12

# Algorithm defaults
DEFAULT_LOVASZ_DELTA = 0.75
DEFAULT_TEMPERATURE = 1.0
COPRIME_SEARCH_LIMIT = 10**6

# Random stream identifiers, combined with the seed as SeedSequence entropy
STREAM_TRAIN = 0
STREAM_TEST = 1
STREAM_INIT = 2
STREAM_ROLLOUT = 3
STREAM_EVAL = 4
STREAM_GEN = 5
STREAM_VALID = 6
