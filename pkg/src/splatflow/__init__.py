"""Dense optical-flow ground truth from animated Gaussian splats.

Modules: ``camera`` (projection chain), ``splat`` (footprints), ``rasterizer``
(tile compositing of color and flow), ``scenegen`` (synthetic datasets),
``flowio`` (file formats), ``metrics`` (flow evaluation), ``regloss``
(flow regularizers) and ``cli``.
"""

__version__ = "0.1.0"
