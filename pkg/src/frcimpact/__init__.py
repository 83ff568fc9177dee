"""Field model of the forward-rate curve and its cross-impact extension."""

__version__ = "0.1.0"
