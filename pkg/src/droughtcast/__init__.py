"""Drought probability forecasting on monthly PDSI grids.

Data model and persistence (cube), drought labeling (labels), synthetic
field generation (synth), per-cell featurization (features), baseline and
logistic models (linear), gradient-boosted trees (gbdt), a ConvLSTM
forecaster with hand-derived gradients (convlstm), per-cell median metrics
(metrics), experiment suites (harness), SVG rendering (render) and the
command-line front end (cli).

Hot kernels run on a compiled Cython core when available and fall back to
numpy otherwise; see droughtcast.KERNEL_BACKEND for the active choice.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .cube import ForecastCube, PdsiCube, RegionStats, load_cube, save_cube
from .features import DesignMatrix, WindowSpec, build_design
from .labels import ClassScheme, LabelCube, bin_multiclass, binarize, severity_class
from .synth import SynthParams, generate

__version__ = "0.1.0"

__all__ = [
    "ClassScheme",
    "DesignMatrix",
    "ForecastCube",
    "KERNEL_BACKEND",
    "LabelCube",
    "PdsiCube",
    "RegionStats",
    "SynthParams",
    "WindowSpec",
    "bin_multiclass",
    "binarize",
    "build_design",
    "generate",
    "load_cube",
    "save_cube",
    "severity_class",
    "__version__",
]
