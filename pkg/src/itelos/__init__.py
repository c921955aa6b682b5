"""Purpose-driven construction of entity graphs from reusable datasets and ontologies."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def fixture_path(*parts: str) -> Path:
    """Path inside the bundled Covid fixture corpus."""
    return Path(str(resources.files(__name__).joinpath("fixtures", "covid", *parts)))
