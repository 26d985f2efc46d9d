"""Allow ``python -m fuseseg`` as an alternative to the console script."""

from .cli import entrypoint

entrypoint()
