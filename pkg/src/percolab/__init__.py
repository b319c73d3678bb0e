"""Bond percolation laboratory for nearest-neighbour and spread-out models on Z^d."""

__version__ = "0.1.0"
