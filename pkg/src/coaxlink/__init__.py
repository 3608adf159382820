"""Simulation and analysis toolkit for cable-linked superconducting qubit modules."""

from . import circuits, devicelab, dynamics, hilbert, lossfit, tomo

__all__ = ["circuits", "devicelab", "dynamics", "hilbert", "lossfit", "tomo"]
