"""Test modules for the CEEI mechanisms toolkit."""
