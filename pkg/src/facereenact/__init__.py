"""Head-reenactment geometry pipeline and toy neural-rendering kernel."""
__version__ = "0.1.0"
