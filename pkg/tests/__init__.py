"""Test suite for the super-resolution pipeline."""
