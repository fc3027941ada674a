"""Cloud-edge collaborative license-plate inference: simulator and live daemons."""

from __future__ import annotations

__version__ = "0.1.0"
