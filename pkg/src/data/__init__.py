"""Training and test data synthesis."""
