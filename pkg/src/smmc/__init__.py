"""Learning STL satisfaction functions of parametric CTMCs with statistical guarantees."""

__version__ = "0.1.0"
