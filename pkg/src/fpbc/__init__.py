"""Compiler and validation toolchain for computational imaging specs."""
