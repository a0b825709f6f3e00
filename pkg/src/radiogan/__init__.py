"""Gene-conditioned nodule synthesis GAN with a plant-and-recover oracle corpus."""

__version__ = "0.1.0"
