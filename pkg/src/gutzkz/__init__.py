"""Gutzwiller mean-field dynamics of the trapped Bose-Hubbard model and Kibble-Zurek scaling analysis."""

__version__ = "0.1.0"
