"""Core solvers: value models, integration backends, CEEI, shadow costs, certificates and menus."""
