"""Iterative parallel-beam CT reconstruction with a gray-level segmentation prior."""
