"""Multi-task RGB gesture recognition with depth-supervised multi-scale decoders.

A small numpy autodiff core (``tensor``, ``ops``), the ACTION excitation block,
a residual backbone with optional local/global mask decoders, losses and SGD,
a synthetic RGB-D clip pipeline, and a training/evaluation engine.
"""

__version__ = "0.1.0"
