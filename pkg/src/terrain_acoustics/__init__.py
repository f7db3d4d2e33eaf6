"""Acoustic terrain classification toolkit."""

__version__ = "0.1.0"

CLASS_NAMES = (
    "asphalt", "mowed_grass", "grass_medhigh", "paving", "cobble",
    "offroad", "wood", "linoleum", "carpet",
)
