"""Test package for rcmlab."""
