"""Reconstruction of multidimensional images from superimposed convolutions."""
from .admm import (PatchPrior, ConvPrior, RunReport, SolverConfig,
                   adapt_penalty, preset, run_analysis, run_synthesis)
from .forward import (BlurBank, NoiseSpec, apply_adjoint, apply_forward,
                      make_psf, simulate_measurements)
from .metrics import psnr, sam, score, ssim
from .phantom import make_phantom

__version__ = "0.1.0"
