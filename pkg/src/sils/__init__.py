"""Unsupervised single image layer separation.

Decomposes one image into physically meaningful layers (reflection/background,
albedo/shading, blended shapes) trained only on unpaired samples of each
domain, via dual encoder/decoder streams with latent self-supervision, cycle
consistency, and adversarial losses.
"""

__version__ = "0.1.0"
