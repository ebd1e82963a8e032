"""Numerical model package: kernels, encoders, GNN and training."""
