"""Dependable vibration-based SHM over simulated wireless sensor networks.

Subpackages mirror the processing pipeline: structural simulation
(:mod:`shmsim.structure`), sensing and fault injection (:mod:`shmsim.sensing`),
mutual-information fault detection (:mod:`shmsim.detection`), Kalman signal
reconstruction (:mod:`shmsim.kalman`), network topology and energy accounting
(:mod:`shmsim.network`), mode-shape monitoring and damage diagnosis
(:mod:`shmsim.modal`), and the scenario harness (:mod:`shmsim.scenario`).
"""

__version__ = "0.1.0"
