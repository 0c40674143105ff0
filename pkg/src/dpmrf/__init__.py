"""Learning discrete graphical models from Laplace-perturbed sufficient statistics."""
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
