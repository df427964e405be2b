"""Text CNNs with separable and dilated convolutions, built on a small numpy autodiff core."""

from .arch import ArchSpec, BranchSpec, Model, build, count_params, make_spec
from .harness import RunConfig, evaluate, t_test, train
from .tensor import Rng, Tensor

__version__ = "0.1.0"
