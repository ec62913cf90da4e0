"""Bundled sample configuration files.

These describe an illustrative 23-joint humanoid (limits, geometry, and
collision spheres are plausible sample data, not vendor ground truth), the
canonical 23-segment human skeleton, and a retarget map connecting the two.
Tests and demos parameterize over whatever model they load, never over the
numbers in these files.
"""

from importlib import resources
from pathlib import Path

SAMPLE_ROBOT = "g1_sample.cfg"
SAMPLE_SKELETON = "human_sample.cfg"
SAMPLE_MAP = "g1_sample.map"


def sample_path(name: str) -> Path:
    """Filesystem path of a bundled sample config file."""
    path = resources.files(__package__).joinpath(name)
    return Path(str(path))


def sample_text(name: str) -> str:
    return resources.files(__package__).joinpath(name).read_text(encoding="utf-8")
