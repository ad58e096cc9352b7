"""Discretely-trained physics-informed neural networks on meshless point clouds."""
