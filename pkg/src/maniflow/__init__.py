"""maniflow: degenerate convection-diffusion on curved periodic grids."""

__version__ = "0.1.0"
