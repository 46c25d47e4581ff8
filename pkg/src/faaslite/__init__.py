"""faaslite: a stateful serverless runtime in plain Python.

Functions are compiled bytecode modules executed inside lightweight
sandboxes ("faaslets") that share regions of memory through a two-tier
state layer.  Cold starts are served from snapshots instead of running
module initialisation.  See the README for the tour.
"""

__version__ = "0.1.0"
