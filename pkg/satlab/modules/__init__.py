"""Core modules for satlab: numerics, data, targets, training and evaluation."""
