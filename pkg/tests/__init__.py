"""Tests for threatlang."""
