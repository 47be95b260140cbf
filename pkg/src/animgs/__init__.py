"""Animatable skinned 3D Gaussian avatars on the CPU."""
