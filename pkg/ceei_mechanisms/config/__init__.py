"""Configuration for the CEEI mechanisms toolkit."""
