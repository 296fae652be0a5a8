"""Fine-grained facial-forgery detection.

Background suppression and high-temperature refinement over a
path-aggregation fusion neck, with desk-scale synthetic experiments,
frame-level ROC metrics, and Grad-CAM visualization.
"""

__version__ = "0.1.0"
