"""Action anticipation with cycle-consistent feature and label translation."""

__version__ = "0.1.0"
