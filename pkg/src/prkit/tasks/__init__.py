from . import grid, infill, mdp_bridge  # noqa: F401
