"""Simulation toolkit for resource-competitive Byzantine agreement in the KT0 model."""
