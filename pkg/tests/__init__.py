"""Tests for the CFFL simulator."""
