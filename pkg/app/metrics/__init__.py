"""Attribute/link metrics, graph-blind baselines and evaluation reports."""

from app.metrics import baselines, calculators, primitives, report

__all__ = ["baselines", "calculators", "primitives", "report"]
