"""Numerical services; import the submodules directly."""
