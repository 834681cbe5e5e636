"""Two-tier Euler/Prandtl expansion around degenerate channel shear flows."""

__version__ = "0.1.0"
