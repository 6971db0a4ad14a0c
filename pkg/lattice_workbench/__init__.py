"""Lattice reduction workbench: LLL, Gauss-move factorization and a learned reduction policy"""
