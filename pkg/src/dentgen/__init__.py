"""Synthetic dented-can datasets: deform, render, composite, evaluate."""

__version__ = "0.1.0"
