"""Selected CI with core-optimized orbitals, exact-diagonalization checks and a distributed Davidson matvec."""

__version__ = "0.1.0"
