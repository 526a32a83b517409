"""Learn and remove per-cell elevation error of global DEMs with boosted trees."""

__version__ = "0.1.0"
