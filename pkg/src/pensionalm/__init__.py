"""Economic scenario generation and asset-liability simulation for DB pension funds."""

__version__ = "0.1.0"
