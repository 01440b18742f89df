"""Crystalline mean curvature flow by minimizing movements on a grid."""
