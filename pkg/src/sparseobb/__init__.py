"""Sparse learnable-proposal detector for oriented boxes.

NMS-free detection head: paired object/background proposals, dual-context
RoI pooling over a feature pyramid, per-proposal dynamic interaction, and
cross-attention fusion, trained with Hungarian set matching.
"""

__version__ = "0.1.0"
