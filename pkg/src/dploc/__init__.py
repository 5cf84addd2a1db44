"""Differentially private GANs for synthetic indoor-localization radiomaps."""

__version__ = "0.1.0"
