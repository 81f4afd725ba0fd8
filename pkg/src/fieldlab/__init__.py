"""Desk-scale simulator for autonomous physical-property mapping.

A virtual robot scans a synthetic tabletop with an RGB-D camera, trains a
joint neural field online, and selects sparse physical interactions (poke,
spectrometer read, lateral push) by rendered softmax entropy.
"""

__version__ = "0.1.0"
