"""aitfsim - Active Internet Traffic Filtering protocol simulator"""

__version__ = "1.0.0"
