"""Bridge from the PyTorch/transformers model zoo to the engine's checkpoint format."""

from .export import emit_reference_vectors, export, fixture_input, main
from .name_map import ExportError, GeometryError, build_name_map, map_state

__version__ = "0.1.0"
