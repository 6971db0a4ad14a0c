"""
Lattice workbench - Modules package
Contains the building blocks: lattice bases and defects, exact integer matrices, reverse-mode
autodiff, seeded sampling, file formats and report generation
"""

# Import modules for easier access
from .integer_matrix import UnimodularMatrix, bareiss_determinant, int_matmul
from .lattice_core import apply_unimodular, gram, log_defect, orthogonality_defect, random_signed_permutation
from .sampling import gumbel_softmax_sample, make_rng, stochastic_round
from .matrix_io import read_dataset, write_dataset
