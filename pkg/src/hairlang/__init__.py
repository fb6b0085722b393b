"""Hair-card modeling: invertible card parameterization, tokenization and a conditional transformer."""

from .core import HairCard, HairMesh, Hairstyle, card_to_mesh, compute_frames, mesh_to_card, style_to_mesh
from .errors import BudgetError, GeometryError, HairError, ParseError
from .tokenizer import PiecewiseScheme, default_scheme

__version__ = "0.1.0"
