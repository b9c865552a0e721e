"""Risk stratification of stage II/III colorectal cancer from tile-level
histology features, plus the survival statistics used to evaluate it."""

__version__ = "0.1.0"
