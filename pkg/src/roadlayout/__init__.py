"""Road-scene layout estimation in the metric top view.

Parametric scene attributes, a deterministic top-view renderer, local and
global birds-eye-view construction, temporal feature warping, a small
from-scratch autograd stack, and a synthetic sequence generator tie together
into one trainable pipeline.
"""

__version__ = "0.1.0"

from .grid import GridSpec, TopViewMap
from .attributes import SceneAttributes, validate

__all__ = ["GridSpec", "TopViewMap", "SceneAttributes", "validate", "__version__"]
