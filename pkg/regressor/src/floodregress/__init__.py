"""CNN regression from (binary change map, slope) patches to flood depth
or bed deformation grids."""

__version__ = "0.1.0"
