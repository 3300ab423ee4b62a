"""Myocardial shape model, signed-distance losses, fitting and LV quantification."""

__version__ = "0.1.0"
