"""Multifrequency PolSAR land-cover classification."""
