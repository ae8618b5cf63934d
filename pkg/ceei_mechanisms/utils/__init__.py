"""Utility modules for numerical integration and report output."""
