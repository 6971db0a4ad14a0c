"""
Command-line entry point for lattice_workbench
"""
import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
