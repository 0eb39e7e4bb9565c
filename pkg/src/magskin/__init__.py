"""Simulation, characterization and tooling for magnetic elastomer tactile skins."""
from ._version import __version__
from .errors import MagskinError
from .magnetics import Dipole, DipoleArray, MagnetometerGrid, SensorReading, dipole_field, read_sensors
from .mechanics import ContactState, TrajectoryParams, deform, make_trajectory, simulate_sequence
from .skins import FabricationConfig, SkinInstance, generate_instance, preset

__all__ = [
    "__version__", "MagskinError", "Dipole", "DipoleArray", "MagnetometerGrid", "SensorReading",
    "dipole_field", "read_sensors", "ContactState", "TrajectoryParams", "deform", "make_trajectory",
    "simulate_sequence", "FabricationConfig", "SkinInstance", "generate_instance", "preset",
]
