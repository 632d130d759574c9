"""Differentiable arrays, layers, optimisers and checkpoints."""
