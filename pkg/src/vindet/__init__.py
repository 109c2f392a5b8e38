"""Video inpainting detection: multi-view transformer encoder, deformable
window interaction, frequency-assisted pyramid decoder, and a synthetic
training harness."""

__version__ = "0.1.0"
