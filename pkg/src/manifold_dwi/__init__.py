"""Log-Euclidean frameworks for diffusion tensors and square-root ODFs.

Submodules
----------
io            NIfTI-1 subset, slice images and streamline files
spd           tensor geometry: eigensolver, log/exp maps, FA
odf           square-root ODFs: SH basis, sphere log/exp maps, GFA, peaks
spectral      backward passes of the matrix log and exp
volume_ops    log-domain resampling, patches, validity audits
losses        adversarial, cycle, prior and anisotropy-weighted losses
tractography  deterministic streamline tracking
metrics       field and tractogram comparison
synth         phantoms and the toy synthesis model
"""

from ._validation import DegenerateError, NotOnManifoldError, UnsupportedFormatError
from .volume import Volume

__version__ = "0.1.0"

__all__ = [
    "DegenerateError",
    "NotOnManifoldError",
    "UnsupportedFormatError",
    "Volume",
    "__version__",
]
