"""Road-network extraction from density rasters by persistence-guided
discrete Morse reconstruction."""

__version__ = "0.1.0"
