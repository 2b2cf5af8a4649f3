"""Rotating structured logger used by every service."""
