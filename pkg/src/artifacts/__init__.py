"""Readers and writers for images, filter banks and CSV reports."""
