__version__ = "0.1.0"

# Bumped whenever the on-disk layout of the artifact changes.
MANIFEST_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
ASSIGNMENT_FORMAT_VERSION = 1
