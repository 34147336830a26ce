"""Linear-swap regret minimization and linear correlated equilibria for convex games."""

__version__ = "0.1.0"
