"""Phase-extended Fourier neural operators and the PDE tooling around them."""

__version__ = "0.1.0"
