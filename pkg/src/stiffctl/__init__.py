"""Stiffness learning from demonstrations with impedance-aware segmentation and prior-weighted multi-objective BO."""
