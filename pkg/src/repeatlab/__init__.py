"""Small-vs-large dataset training dynamics: tasks, MLPs, schedules, theory checks and a CLI."""

__version__ = "0.1.0"
