"""Wrist-sensor handwashing step recognition, model compression and reminders.

Subpackages: ``signal`` (filtering, windows, features), ``model`` (hybrid
classifier), ``compress`` (budgeted pruning search), ``assess`` (quality
reports), ``context`` (reminder state machine) and ``harness`` (synthetic
data, evaluation protocols, CLI support).
"""

__version__ = "0.1.0"
