"""Feature-matcher evaluation harness.

Re-organizes SLAM/SfM sequences into matched image pairs, estimates relative
camera pose from each matcher's correspondences, scores the pose error against
ground truth, and aggregates SP curves, AUC scores, AP bars, and timings.
"""

__version__ = "0.1.0"
