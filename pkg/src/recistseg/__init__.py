"""Weakly supervised lesion segmentation from RECIST diameter annotations.

Builds paired under-/over-segmenting supervision masks from the diameters,
co-trains two small subnets with a region-constrained consistency loss, and
fuses their predictions by averaging.
"""

__version__ = "0.1.0"
