"""Out-of-band workflow-integrity auditing from passive EM emanations."""

__version__ = "0.1.0"
