# G2D2 - gradient-guided discrete diffusion for linear inverse problems
__version__ = "1.0.0"
