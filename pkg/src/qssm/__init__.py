# Filename: __init__.py
# Author: Rich Lewis @RichLewis007
# Description: Top-level package initialization for qssm, quantized S5 sequence models.

__all__ = ["__author__", "__version__"]

__version__ = "1.0.0"
__author__ = "Rich Lewis"
