"""Moving-mesh finite elements for two-phase flow with reactive, semi-permeable interfaces."""

__version__ = "0.1.0"
