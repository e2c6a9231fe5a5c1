"""Crosspoint PCM subarray TMVM simulator and design-space analyzer."""

__version__ = "0.1.0"
