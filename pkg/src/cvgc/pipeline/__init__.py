"""File formats, run configuration and the command-line front end."""

from .config import PRESETS, RunConfig, make_config
from .io import CloudFileFormat, read_cloud, write_cloud
