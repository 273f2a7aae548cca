"""Writing-surface material classification for manuscript fragment images."""

__version__ = "0.1.0"

MATERIALS = ("parchment", "papyrus")
IMAGE_SETS = ("color", "multispectral")
