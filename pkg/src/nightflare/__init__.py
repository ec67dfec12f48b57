"""Single-image removal of glow and ghost lens flare in night photographs.

Modules
-------
raster      image buffers, I/O, convolution, PSNR/SSIM
formation   forward flare model and synthetic pairs
lightsource light-source detection
psf         learned glow kernel and brightness alignment
ostpm       ghost-mask prediction and exemplar inpainting
solver      self-supervised joint solver
cli         ``nightflare`` command line
"""

from .errors import (ContractError, DimensionError, FlareError, ImageFormatError,
                     NonFiniteError, ParameterError, PipelineError, SearchExhaustedError,
                     SourceMissingError, StallError)
from .formation import FlareScene, OpticalConfig, synth_pair
from .psf import BolParams, KernelParams
from .solver import SolverConfig, run

__version__ = "0.1.0"
