"""Multi-frequency inverse scattering for the 3D Helmholtz equation.

Modules: ``core`` (grids, fields, partitions), ``forward`` (volume integral
solver), ``propagation`` (angular spectrum), ``preprocess`` (data pipeline),
``inversion`` (coefficient reconstruction) and ``cli`` (command line).
"""

__version__ = "0.1.0"
