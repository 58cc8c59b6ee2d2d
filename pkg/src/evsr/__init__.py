"""Event-stream super-resolution at desk scale.

Subpackages are imported lazily by callers; keeping this module empty of
heavy imports lets the CLI cap thread counts before numpy loads.
"""

__version__ = "0.1.0"
