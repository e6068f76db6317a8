"""Modal uncertainty estimation with a discrete latent codebook."""
__version__ = "0.1.0"
