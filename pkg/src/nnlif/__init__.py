"""Legendre spectral solvers for the NNLIF Fokker-Planck equation."""
